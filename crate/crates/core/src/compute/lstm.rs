use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParameterStore};
use super::Tensor;
use crate::error::Result;

/// One LSTM layer. The weight matrix is `4h x (input + h)`: input columns
/// first, recurrent columns last. Gate order is input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmLayer {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = input_dim + hidden;
        let w = store.register_uniform(format!("{name}.w"), 4 * hidden, fan_in, fan_in, rng)?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        let b = store.register(format!("{name}.b"), Tensor::vector(bias))?;
        Ok(LstmLayer {
            w,
            b,
            input_dim,
            hidden,
        })
    }

    /// Partial pre-activation `W[:, offset..] * x` for an input segment.
    pub fn project(&self, g: &mut Graph, x: Var, offset: usize) -> Var {
        debug_assert!(offset + g.dim(x) <= self.input_dim);
        g.matvec(self.w, x, offset)
    }

    /// Advances one step given the full input projection (without bias).
    pub fn step_projected(&self, g: &mut Graph, state: CellState, projected: Var) -> CellState {
        let rec = g.matvec(self.w, state.h, self.input_dim);
        let bias = g.param(self.b);
        let pre = g.add_n(&[projected, rec, bias]);
        let out = g.lstm_cell(pre, state.c);
        let c = g.slice(out, 0, self.hidden);
        let h = g.slice(out, self.hidden, self.hidden);
        CellState { c, h }
    }

    pub fn step(&self, g: &mut Graph, state: CellState, input: Var) -> CellState {
        let projected = self.project(g, input, 0);
        self.step_projected(g, state, projected)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CellState {
    pub c: Var,
    pub h: Var,
}

/// A stack of LSTM layers, each feeding its hidden output to the next.
#[derive(Debug, Clone)]
pub struct LstmStack {
    pub layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone)]
pub struct StackState {
    pub layers: Vec<CellState>,
}

impl StackState {
    /// Hidden output of the top layer.
    pub fn output(&self) -> Var {
        self.layers.last().expect("empty stack").h
    }
}

impl LstmStack {
    pub fn new<R: Rng>(
        store: &mut ParameterStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let in_dim = if l == 0 { input_dim } else { hidden };
            layers.push(LstmLayer::new(store, &format!("{name}.l{l}"), in_dim, hidden, rng)?);
        }
        Ok(LstmStack { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn hidden(&self) -> usize {
        self.layers.last().expect("empty stack").hidden
    }

    pub fn zero_state(&self, g: &mut Graph) -> StackState {
        StackState {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let z = g.zeros(l.hidden);
                    CellState { c: z, h: z }
                })
                .collect(),
        }
    }

    /// Sum of partial projections of consecutive input segments starting at
    /// column `offset` of the first layer.
    pub fn project(&self, g: &mut Graph, parts: &[Var], offset: usize) -> Var {
        let mut col = offset;
        let mut terms = Vec::with_capacity(parts.len());
        for &p in parts {
            terms.push(self.layers[0].project(g, p, col));
            col += g.dim(p);
        }
        if terms.len() == 1 {
            terms[0]
        } else {
            g.add_n(&terms)
        }
    }

    pub fn step_projected(&self, g: &mut Graph, state: &StackState, projected: Var) -> StackState {
        let mut layers = Vec::with_capacity(self.layers.len());
        let first = self.layers[0].step_projected(g, state.layers[0], projected);
        layers.push(first);
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let below = layers[l - 1].h;
            layers.push(layer.step(g, state.layers[l], below));
        }
        StackState { layers }
    }

    /// One step with the input given as consecutive segments covering the
    /// whole first-layer input.
    pub fn step(&self, g: &mut Graph, state: &StackState, parts: &[Var]) -> StackState {
        let total: usize = parts.iter().map(|p| g.dim(*p)).sum();
        assert_eq!(
            total,
            self.input_dim(),
            "stack input width does not match the first layer"
        );
        let projected = self.project(g, parts, 0);
        self.step_projected(g, state, projected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_store_cell(hidden: usize, input: usize) -> (ParameterStore, LstmLayer) {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = LstmLayer::new(&mut store, "cell", input, hidden, &mut rng).unwrap();
        store.get_mut(layer.w).fill(0.0);
        store.get_mut(layer.b).fill(0.0);
        (store, layer)
    }

    #[test]
    fn zero_weights_and_zero_state_stay_at_zero() {
        let (store, layer) = zero_store_cell(3, 2);
        let mut g = Graph::new(&store);
        let z = g.zeros(3);
        let x = g.input(vec![0.7, -0.2]);
        let s = layer.step(&mut g, CellState { c: z, h: z }, x);
        assert_eq!(g.value(s.c), &[0.0; 3]);
        assert_eq!(g.value(s.h), &[0.0; 3]);
    }

    #[test]
    fn zero_weights_unit_cell_halves_the_state() {
        // Every gate is sigmoid(0) = 0.5 and the candidate is tanh(0) = 0.
        let (store, layer) = zero_store_cell(4, 2);
        let mut g = Graph::new(&store);
        let c = g.input(vec![1.0; 4]);
        let h = g.zeros(4);
        let x = g.input(vec![0.3, 0.1]);
        let s = layer.step(&mut g, CellState { c, h }, x);
        for v in g.value(s.c) {
            assert_eq!(*v, 0.5);
        }
        for v in g.value(s.h) {
            assert!((v - 0.5 * 0.5f64.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = LstmLayer::new(&mut store, "cell", 2, 3, &mut rng).unwrap();
        assert_eq!(store.get(layer.b).data(), &[0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn identical_seeds_give_identical_outputs() {
        let run = || {
            let mut store = ParameterStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let stack = LstmStack::new(&mut store, "s", 3, 5, 2, &mut rng).unwrap();
            let mut g = Graph::new(&store);
            let mut st = stack.zero_state(&mut g);
            for t in 0..4 {
                let x = g.input(vec![t as f64 * 0.1, 0.2, -0.3]);
                st = stack.step(&mut g, &st, &[x]);
            }
            g.value(st.output()).to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn split_projection_matches_whole_input() {
        let mut store = ParameterStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = LstmStack::new(&mut store, "s", 5, 4, 2, &mut rng).unwrap();
        let mut g = Graph::new(&store);
        let st = stack.zero_state(&mut g);
        let whole = g.input(vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let a = g.input(vec![0.1, 0.2]);
        let b = g.input(vec![0.3, 0.4, 0.5]);
        let s1 = stack.step(&mut g, &st, &[whole]);
        let s2 = stack.step(&mut g, &st, &[a, b]);
        for (x, y) in g.value(s1.output()).iter().zip(g.value(s2.output())) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
