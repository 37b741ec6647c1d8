//! Hierarchical decoder with data-dependent unroll lengths.
//!
//! A syllable-rate stack reads the sentence prosody embedding with sentence,
//! word and syllable features; a phone-rate stack expands each syllable
//! output into phone representations. Three heads read the phone outputs:
//!
//! * a single-layer recurrent duration head emitting frames per phone,
//! * a c0 stack unrolled `n_p` frames per phone with its state carried from
//!   phone to phone,
//! * an F0 stack unrolled once per syllable for the summed duration of the
//!   syllable's phones, fed the syllable output and the activation of the
//!   syllable's last phone.
//!
//! Unroll lengths come from ground truth when teacher forcing and from the
//! rounded duration predictions otherwise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::compute::{Affine, Graph, LstmStack, ParameterStore, Var};
use crate::config::ChiveConfig;
use crate::error::{Error, Result};
use crate::linguistic::{relative_position, TimingLevel, UtteranceTree, FRAME_SHIFT_MS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationMode {
    /// Unroll lengths from ground-truth durations (training and frame-aligned scoring).
    TeacherForced,
    /// Unroll lengths from rounded duration predictions (inference).
    FreeRunning,
}

/// Decoder output in plain values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProsodicPrediction {
    pub durations_raw: Vec<f64>,
    pub durations_realized: Vec<u32>,
    pub log_f0: Vec<f64>,
    pub c0: Vec<f64>,
    pub mode: DurationMode,
}

impl ProsodicPrediction {
    pub fn frame_count(&self) -> usize {
        self.log_f0.len()
    }

    /// Contour table with columns `frame_ms, log_f0, c0`.
    pub fn contour_csv(&self) -> String {
        let mut out = String::from("frame_ms,log_f0,c0\n");
        for (t, (l, c)) in self.log_f0.iter().zip(&self.c0).enumerate() {
            out.push_str(&format!("{},{},{}\n", t as f64 * FRAME_SHIFT_MS, l, c));
        }
        out
    }

    /// Per-phone table with columns `phone, start_ms, duration_frames, duration_raw`.
    pub fn duration_csv(&self) -> String {
        let mut out = String::from("phone,start_ms,duration_frames,duration_raw\n");
        let mut start = 0u32;
        for (p, (d, raw)) in self.durations_realized.iter().zip(&self.durations_raw).enumerate() {
            out.push_str(&format!("{},{},{},{}\n", p, start as f64 * FRAME_SHIFT_MS, d, raw));
            start += d;
        }
        out
    }
}

/// Rounds a raw duration prediction to a positive frame count: half away
/// from zero, clamped below at one frame.
pub fn round_duration(raw: f64) -> Result<u32> {
    if !raw.is_finite() {
        return Err(Error::NonFinite(format!("duration prediction {raw}")));
    }
    let r = raw.round();
    Ok(if r < 1.0 { 1 } else { r.min(u32::MAX as f64) as u32 })
}

/// Tape nodes of a decoder pass.
#[derive(Debug, Clone)]
pub struct DecodeVars {
    pub durations_raw: Var,
    pub log_f0: Var,
    pub c0: Var,
    pub durations_realized: Vec<u32>,
    pub mode: DurationMode,
}

impl DecodeVars {
    pub fn value(&self, g: &Graph) -> ProsodicPrediction {
        ProsodicPrediction {
            durations_raw: g.value(self.durations_raw).to_vec(),
            durations_realized: self.durations_realized.clone(),
            log_f0: g.value(self.log_f0).to_vec(),
            c0: g.value(self.c0).to_vec(),
            mode: self.mode,
        }
    }
}

/// Step counts of one decoder pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecoderTrace {
    pub syllable_steps: usize,
    pub phone_steps: usize,
    pub duration_steps: usize,
    pub c0_steps_per_phone: Vec<usize>,
    pub f0_steps_per_syllable: Vec<usize>,
}

impl DecoderTrace {
    pub fn c0_steps(&self) -> usize {
        self.c0_steps_per_phone.iter().sum()
    }

    pub fn f0_steps(&self) -> usize {
        self.f0_steps_per_syllable.iter().sum()
    }
}

/// Resolves the per-phone unroll lengths for a decode.
pub(crate) fn unroll_lengths(tree: &UtteranceTree, mode: DurationMode) -> Result<Option<Vec<u32>>> {
    match mode {
        DurationMode::TeacherForced => tree
            .durations()
            .map(Some)
            .ok_or_else(|| Error::Input("teacher forcing requires ground-truth durations on every phone".into())),
        DurationMode::FreeRunning => Ok(None),
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub syllable: LstmStack,
    pub phone: LstmStack,
    pub duration: LstmStack,
    pub duration_out: Affine,
    pub c0: LstmStack,
    pub c0_out: Affine,
    pub f0: LstmStack,
    pub f0_out: Affine,
    latent_dim: usize,
}

impl Decoder {
    pub fn new<R: Rng>(store: &mut ParameterStore, config: &ChiveConfig, rng: &mut R) -> Result<Self> {
        let f = config.features;
        let h = config.hidden;
        let hf = config.frame_hidden;
        let frame_t = TimingLevel::Frame.dim();
        let syllable = LstmStack::new(
            store,
            "decoder.syllable",
            config.latent_dim
                + f.sentence
                + f.word
                + f.syllable
                + TimingLevel::Word.dim()
                + TimingLevel::Syllable.dim(),
            h,
            config.layers,
            rng,
        )?;
        let phone = LstmStack::new(
            store,
            "decoder.phone",
            h + f.sentence + f.word + f.syllable + f.phone + TimingLevel::Phone.dim(),
            h,
            config.layers,
            rng,
        )?;
        let duration = LstmStack::new(store, "decoder.duration", h, config.duration_hidden, 1, rng)?;
        let duration_out = Affine::new(store, "decoder.duration_out", config.duration_hidden, 1, rng)?;
        let c0 = LstmStack::new(store, "decoder.c0", h + frame_t, hf, config.layers, rng)?;
        let c0_out = Affine::new(store, "decoder.c0_out", hf, 1, rng)?;
        let f0 = LstmStack::new(store, "decoder.f0", 2 * h + frame_t, hf, config.layers, rng)?;
        let f0_out = Affine::new(store, "decoder.f0_out", hf, 1, rng)?;
        Ok(Decoder {
            syllable,
            phone,
            duration,
            duration_out,
            c0,
            c0_out,
            f0,
            f0_out,
            latent_dim: config.latent_dim,
        })
    }

    pub fn decode(
        &self,
        g: &mut Graph,
        tree: &UtteranceTree,
        embedding: Var,
        mode: DurationMode,
    ) -> Result<(DecodeVars, DecoderTrace)> {
        tree.validate(None).into_result()?;
        if g.dim(embedding) != self.latent_dim {
            return Err(Error::dim("decoder embedding", self.latent_dim, g.dim(embedding)));
        }
        let forced = unroll_lengths(tree, mode)?;
        let mut trace = DecoderTrace::default();

        let sentence = g.input(tree.sentence_features.clone());
        let fixed_syl = self.syllable.project(g, &[embedding, sentence], 0);
        let fixed_cols = self.latent_dim + tree.sentence_features.len();
        let n_words = tree.words.len();
        let words: Vec<(Var, Var)> = tree
            .words
            .iter()
            .enumerate()
            .map(|(w, word)| {
                let feats = g.input(word.features.clone());
                let timing = g.input(TimingLevel::Word.encode(relative_position(w, n_words)));
                (feats, timing)
            })
            .collect();

        // Syllable and phone rates.
        let mut syl_state = self.syllable.zero_state(g);
        let mut phone_state = self.phone.zero_state(g);
        let mut syl_out = Vec::with_capacity(tree.syllable_count());
        let mut phone_out = Vec::with_capacity(tree.phone_count());
        let mut last_phone_of_syl = Vec::with_capacity(tree.syllable_count());
        for syl in tree.syllables() {
            let (word_feats, word_timing) = words[syl.word];
            let syl_feats = g.input(syl.node.features.clone());
            let n_syl = tree.words[syl.word].syllables.len();
            let syl_timing = g.input(TimingLevel::Syllable.encode(relative_position(syl.index_in_word, n_syl)));
            let rest = self
                .syllable
                .project(g, &[word_feats, syl_feats, word_timing, syl_timing], fixed_cols);
            let projected = g.add(fixed_syl, rest);
            syl_state = self.syllable.step_projected(g, &syl_state, projected);
            trace.syllable_steps += 1;
            let a = syl_state.output();
            syl_out.push(a);

            let n_ph = syl.node.phones.len();
            for (i, phone) in syl.node.phones.iter().enumerate() {
                let feats = g.input(phone.features.clone());
                let timing = g.input(TimingLevel::Phone.encode(relative_position(i, n_ph)));
                phone_state = self
                    .phone
                    .step(g, &phone_state, &[a, sentence, word_feats, syl_feats, feats, timing]);
                trace.phone_steps += 1;
                phone_out.push(phone_state.output());
            }
            last_phone_of_syl.push(*phone_out.last().expect("syllable has phones"));
        }

        // Duration head.
        let mut dur_state = self.duration.zero_state(g);
        let mut dur_nodes = Vec::with_capacity(phone_out.len());
        for &b in &phone_out {
            dur_state = self.duration.step(g, &dur_state, &[b]);
            trace.duration_steps += 1;
            dur_nodes.push(self.duration_out.apply(g, dur_state.output()));
        }
        let durations_raw = g.concat(&dur_nodes);
        let realized = match forced {
            Some(d) => d,
            None => g
                .value(durations_raw)
                .iter()
                .map(|r| round_duration(*r))
                .collect::<Result<Vec<_>>>()?,
        };

        // c0: one unroll per phone, state chained across phones.
        let h = self.phone.hidden();
        let mut c0_state = self.c0.zero_state(g);
        let mut c0_nodes = Vec::new();
        for (&b, &n) in phone_out.iter().zip(&realized) {
            let fixed = self.c0.project(g, &[b], 0);
            for k in 0..n as usize {
                let timing = g.input(TimingLevel::Frame.encode(relative_position(k, n as usize)));
                let t = self.c0.project(g, &[timing], h);
                let projected = g.add(fixed, t);
                c0_state = self.c0.step_projected(g, &c0_state, projected);
                c0_nodes.push(self.c0_out.apply(g, c0_state.output()));
            }
            trace.c0_steps_per_phone.push(n as usize);
        }

        // F0: one unroll per syllable over the summed phone durations.
        let mut f0_state = self.f0.zero_state(g);
        let mut f0_nodes = Vec::new();
        for (s, syl) in tree.syllables().enumerate() {
            let n: usize = realized[syl.first_phone..syl.first_phone + syl.node.phones.len()]
                .iter()
                .map(|d| *d as usize)
                .sum();
            let fixed = self.f0.project(g, &[syl_out[s], last_phone_of_syl[s]], 0);
            for k in 0..n {
                let timing = g.input(TimingLevel::Frame.encode(relative_position(k, n)));
                let t = self.f0.project(g, &[timing], 2 * h);
                let projected = g.add(fixed, t);
                f0_state = self.f0.step_projected(g, &f0_state, projected);
                f0_nodes.push(self.f0_out.apply(g, f0_state.output()));
            }
            trace.f0_steps_per_syllable.push(n);
        }

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
