//! Non-hierarchical comparison model.
//!
//! A single frame-clocked encoder stack reads prosody with every linguistic
//! feature broadcast down to frames; its last output is projected to the
//! posterior. The decoder is another frame-clocked stack fed the embedding
//! and the same broadcast features. Phone durations are read from the
//! decoder state at each phone's first frame, so free-running decoding stays
//! strictly frame by frame.

use rand::Rng;

use crate::compute::{Affine, Graph, LstmStack, ParameterStore, Var};
use crate::config::{BaselineConfig, ProsodyNorm};
use crate::decoder::{round_duration, unroll_lengths, DecodeVars, DurationMode};
use crate::encoder::PROSODIC_FRAME_DIM;
use crate::error::{Error, Result};
use crate::linguistic::{relative_position, FeatureDims, ProsodicTargets, TimingLevel, UtteranceTree};
use crate::variational::{PosteriorVars, VariationalLayer};

#[derive(Debug, Clone)]
pub struct Baseline {
    pub encoder: LstmStack,
    pub variational: VariationalLayer,
    pub decoder: LstmStack,
    pub f0_out: Affine,
    pub c0_out: Affine,
    pub duration_out: Affine,
    pub prosody_norm: ProsodyNorm,
    latent_dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaselineTrace {
    pub encoder_steps: usize,
    pub decoder_steps: usize,
}

fn linguistic_dim(f: &FeatureDims) -> usize {
    f.sentence + f.word + f.syllable + f.phone
}

fn timing_dim() -> usize {
    TimingLevel::ALL.iter().map(|l| l.dim()).sum()
}

/// Per-phone broadcast inputs that stay constant over the phone's frames.
struct PhoneContext {
    /// word, syllable, phone features and word/syllable/phone timing.
    parts: Vec<Var>,
}

fn phone_contexts(g: &mut Graph, tree: &UtteranceTree) -> Vec<PhoneContext> {
    let n_words = tree.words.len();
    let word_vars: Vec<(Var, Var)> = tree
        .words
        .iter()
        .enumerate()
        .map(|(w, word)| {
            (
                g.input(word.features.clone()),
                g.input(TimingLevel::Word.encode(relative_position(w, n_words))),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(tree.phone_count());
    for syl in tree.syllables() {
        let (wf, wt) = word_vars[syl.word];
        let sf = g.input(syl.node.features.clone());
        let n_syl = tree.words[syl.word].syllables.len();
        let st = g.input(TimingLevel::Syllable.encode(relative_position(syl.index_in_word, n_syl)));
        let n_ph = syl.node.phones.len();
        for (i, phone) in syl.node.phones.iter().enumerate() {
            let pf = g.input(phone.features.clone());
            let pt = g.input(TimingLevel::Phone.encode(relative_position(i, n_ph)));
            out.push(PhoneContext {
                parts: vec![wf, sf, pf, wt, st, pt],
            });
        }
    }
    out
}

impl Baseline {
    pub fn frame_input_dim(f: &FeatureDims) -> usize {
        linguistic_dim(f) + timing_dim()
    }

    pub fn new<R: Rng>(store: &mut ParameterStore, config: &BaselineConfig, rng: &mut R) -> Result<Self> {
        let f = config.features;
        let shared = Self::frame_input_dim(&f);
        let encoder = LstmStack::new(
            store,
            "baseline.encoder",
            shared + PROSODIC_FRAME_DIM,
            config.hidden,
            config.layers,
            rng,
        )?;
        let variational =
            VariationalLayer::new(store, "baseline.variational", config.hidden, config.latent_dim, rng)?;
        let decoder = LstmStack::new(
            store,
            "baseline.decoder",
            config.latent_dim + shared,
            config.hidden,
            config.layers,
            rng,
        )?;
        let f0_out = Affine::new(store, "baseline.f0_out", config.hidden, 1, rng)?;
        let c0_out = Affine::new(store, "baseline.c0_out", config.hidden, 1, rng)?;
        let duration_out = Affine::new(store, "baseline.duration_out", config.hidden, 1, rng)?;
        Ok(Baseline {
            encoder,
            variational,
            decoder,
            f0_out,
            c0_out,
            duration_out,
            prosody_norm: config.prosody_norm,
            latent_dim: config.latent_dim,
        })
    }

    /// One left-to-right pass over all frames, projected to the posterior.
    ///
    /// Encoder input layout: sentence, word, syllable, phone features, word,
    /// syllable, phone timing, then standardised `[log_f0, c0]` and frame timing.
    pub fn encode(
        &self,
        g: &mut Graph,
        tree: &UtteranceTree,
        targets: &ProsodicTargets,
    ) -> Result<(PosteriorVars, BaselineTrace)> {
        tree.validate(Some(targets)).into_result()?;
        let mut trace = BaselineTrace::default();
        let sentence = g.input(tree.sentence_features.clone());
        let fixed = self.encoder.project(g, &[sentence], 0);
        let contexts = phone_contexts(g, tree);
        let mut state = self.encoder.zero_state(g);
        let varying_col = Self::frame_input_dim(&tree.feature_dims().expect("validated tree")) - TimingLevel::Frame.dim();
        let mut t = 0usize;
        for (ctx, &d) in contexts.iter().zip(&targets.durations) {
            let phone_part = self.encoder.project(g, &ctx.parts, tree.sentence_features.len());
            let phone_fixed = g.add(fixed, phone_part);
            for k in 0..d as usize {
                let prosody = g.input(self.prosody_norm.apply(targets.log_f0[t], targets.c0[t]));
                let timing = g.input(TimingLevel::Frame.encode(relative_position(k, d as usize)));
                let frame_part = self.encoder.project(g, &[prosody, timing], varying_col);
                let projected = g.add(phone_fixed, frame_part);
                state = self.encoder.step_projected(g, &state, projected);
                trace.encoder_steps += 1;
                t += 1;
            }
        }
        let post = self.variational.project(g, state.output())?;
        Ok((post, trace))
    }

    /// Frame-clocked decode. Input layout: embedding, sentence, word,
    /// syllable, phone features, word/syllable/phone timing, frame timing.
    pub fn decode(
        &self,
        g: &mut Graph,
        tree: &UtteranceTree,
        embedding: Var,
        mode: DurationMode,
    ) -> Result<(DecodeVars, BaselineTrace)> {
        tree.validate(None).into_result()?;
        if g.dim(embedding) != self.latent_dim {
            return Err(Error::dim("baseline embedding", self.latent_dim, g.dim(embedding)));
        }
        let forced = unroll_lengths(tree, mode)?;
        let mut trace = BaselineTrace::default();
        let sentence = g.input(tree.sentence_features.clone());
        let fixed = self.decoder.project(g, &[embedding, sentence], 0);
        let phone_col = self.latent_dim + tree.sentence_features.len();
        let frame_col = self.decoder.input_dim() - TimingLevel::Frame.dim();
        let contexts = phone_contexts(g, tree);

        let mut state = self.decoder.zero_state(g);
        let mut dur_nodes = Vec::with_capacity(contexts.len());
        let mut realized = Vec::with_capacity(contexts.len());
        let mut f0_nodes = Vec::new();
        let mut c0_nodes = Vec::new();
        for (p, ctx) in contexts.iter().enumerate() {
            let phone_part = self.decoder.project(g, &ctx.parts, phone_col);
            let phone_fixed = g.add(fixed, phone_part);
            let mut k = 0usize;
            let mut n = forced.as_ref().map(|d| d[p] as usize);
            while n.map_or(true, |n| k < n) {
                let pos = n.map_or(0.0, |n| relative_position(k, n));
                let timing = g.input(TimingLevel::Frame.encode(pos));
                let frame_part = self.decoder.project(g, &[timing], frame_col);
                let projected = g.add(phone_fixed, frame_part);
                state = self.decoder.step_projected(g, &state, projected);
                trace.decoder_steps += 1;
                let top = state.output();
                if k == 0 {
                    let d = self.duration_out.apply(g, top);
                    dur_nodes.push(d);
                    if n.is_none() {
                        n = Some(round_duration(g.scalar(d))? as usize);
                    }
                }
                f0_nodes.push(self.f0_out.apply(g, top));
                c0_nodes.push(self.c0_out.apply(g, top));
                k += 1;
            }
            realized.push(n.expect("resolved at first frame") as u32);
        }
        let durations_raw = g.concat(&dur_nodes);
        let log_f0 = g.concat(&f0_nodes);
        let c0 = g.concat(&c0_nodes);
        Ok((
            DecodeVars {
                durations_raw,
                log_f0,
                c0,
                durations_realized: realized,
                mode,
            },
            trace,
        ))
    }
}
