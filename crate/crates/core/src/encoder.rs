//! Hierarchical encoder: frame-, phone- and syllable-rate stacks.
//!
//! The frame-rate stack reads standardised `[log_f0, c0]` plus a frame timing signal; the
//! phone-rate stack reads phone features plus phone timing. Both start every
//! syllable from a zero state and emit their top hidden output at the
//! syllable's last frame / last phone. The syllable-rate stack consumes those
//! two captures together with syllable, word and sentence features and runs
//! over the whole utterance; its final output summarises the utterance.

use rand::Rng;

use crate::compute::{Graph, LstmStack, ParameterStore, Var};
use crate::config::{ChiveConfig, ProsodyNorm};
use crate::error::{Error, Result};
use crate::linguistic::{relative_position, ProsodicTargets, TimingLevel, UtteranceTree};

#[derive(Debug, Clone)]
pub struct Encoder {
    pub frame: LstmStack,
    pub phone: LstmStack,
    pub syllable: LstmStack,
    pub prosody_norm: ProsodyNorm,
}

/// Step counts and captured outputs of one encoder pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncoderTrace {
    pub frame_steps: usize,
    pub phone_steps: usize,
    pub syllable_steps: usize,
    /// Frame-rate output captured at the end of each syllable.
    pub frame_captures: Vec<Vec<f64>>,
    /// Phone-rate output captured at the end of each syllable.
    pub phone_captures: Vec<Vec<f64>>,
    /// First-layer input of the syllable-rate stack, one per syllable.
    pub syllable_inputs: Vec<Vec<f64>>,
}

/// Final hidden activation of the syllable-rate stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSummary(pub Vec<f64>);

pub(crate) const PROSODIC_FRAME_DIM: usize = 2;

impl Encoder {
    pub fn syllable_input_dim(config: &ChiveConfig) -> usize {
        let f = config.features;
        config.frame_hidden
            + config.hidden
            + f.syllable
            + f.word
            + f.sentence
            + TimingLevel::Syllable.dim()
            + TimingLevel::Word.dim()
    }

    pub fn new<R: Rng>(store: &mut ParameterStore, config: &ChiveConfig, rng: &mut R) -> Result<Self> {
        let f = config.features;
        let frame = LstmStack::new(
            store,
            "encoder.frame",
            PROSODIC_FRAME_DIM + TimingLevel::Frame.dim(),
            config.frame_hidden,
            config.layers,
            rng,
        )?;
        let phone = LstmStack::new(
            store,
            "encoder.phone",
            f.phone + TimingLevel::Phone.dim(),
            config.hidden,
            config.layers,
            rng,
        )?;
        let syllable = LstmStack::new(
            store,
            "encoder.syllable",
            Self::syllable_input_dim(config),
            config.hidden,
            config.layers,
            rng,
        )?;
        Ok(Encoder {
            frame,
            phone,
            syllable,
            prosody_norm: config.prosody_norm,
        })
    }

    pub fn summary_dim(&self) -> usize {
        self.syllable.hidden()
    }

    /// Runs the encoder on the tape and returns the summary node.
    pub fn encode(
        &self,
        g: &mut Graph,
        tree: &UtteranceTree,
        targets: &ProsodicTargets,
    ) -> Result<(Var, EncoderTrace)> {
        let report = tree.validate(Some(targets));
        report.into_result()?;
        if targets.durations.len() != tree.phone_count() {
            return Err(Error::dim("encoder durations", tree.phone_count(), targets.durations.len()));
        }
        let mut trace = EncoderTrace::default();
        let sentence = g.input(tree.sentence_features.clone());
        let n_words = tree.words.len();
        let word_vars: Vec<(Var, Var)> = tree
            .words
            .iter()
            .enumerate()
            .map(|(w, word)| {
                let feats = g.input(word.features.clone());
                let timing = g.input(TimingLevel::Word.encode(relative_position(w, n_words)));
                (feats, timing)
            })
            .collect();

        let mut syl_state = self.syllable.zero_state(g);
        let mut frame_cursor = 0usize;
        for syl in tree.syllables() {
            let phones = &syl.node.phones;
            let frames: usize = targets.durations[syl.first_phone..syl.first_phone + phones.len()]
                .iter()
                .map(|d| *d as usize)
                .sum();

            let mut frame_state = self.frame.zero_state(g);
            for k in 0..frames {
                let t = frame_cursor + k;
                let prosody = g.input(self.prosody_norm.apply(targets.log_f0[t], targets.c0[t]));
                let timing = g.input(TimingLevel::Frame.encode(relative_position(k, frames)));
                frame_state = self.frame.step(g, &frame_state, &[prosody, timing]);
                trace.frame_steps += 1;
            }
            frame_cursor += frames;

            let mut phone_state = self.phone.zero_state(g);
            for (i, phone) in phones.iter().enumerate() {
                let feats = g.input(phone.features.clone());
                let timing = g.input(TimingLevel::Phone.encode(relative_position(i, phones.len())));
                phone_state = self.phone.step(g, &phone_state, &[feats, timing]);
                trace.phone_steps += 1;
            }

            let frame_out = frame_state.output();
            let phone_out = phone_state.output();
            trace.frame_captures.push(g.value(frame_out).to_vec());
            trace.phone_captures.push(g.value(phone_out).to_vec());

            let (word_feats, word_timing) = word_vars[syl.word];
            let syl_feats = g.input(syl.node.features.clone());
            let n_syl = tree.words[syl.word].syllables.len();
            let syl_timing = g.input(TimingLevel::Syllable.encode(relative_position(syl.index_in_word, n_syl)));
            let parts = [
                frame_out,
                phone_out,
                syl_feats,
                word_feats,
                sentence,
                syl_timing,
                word_timing,
            ];
            trace
                .syllable_inputs
                .push(parts.iter().flat_map(|p| g.value(*p).to_vec()).collect());
            syl_state = self.syllable.step(g, &syl_state, &parts);
            trace.syllable_steps += 1;
        }
        Ok((syl_state.output(), trace))
    }
}
