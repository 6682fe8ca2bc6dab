use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tower::BoundTower;
use super::TextEncoder;
use crate::error::{Error, Result};
use crate::nn::{BoundLinear, Linear, Mlp};
use crate::rng::{normal_vec, seeded, stream};
use crate::tensor::{Gradients, Tape, Tensor, Var};
use crate::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptMode {
    /// `[V_G][V][CLS]`
    #[serde(rename = "cgil")]
    ClassPlusGenerated,
    /// `[V][CLS]`
    #[serde(rename = "class")]
    ClassOnly,
    /// `[V_G][CLS]`
    #[serde(rename = "generated")]
    GeneratedOnly,
    /// `[U][CLS]` with `U` shared by every class.
    #[serde(rename = "unified")]
    Unified,
}

impl PromptMode {
    pub fn uses_contexts(self) -> bool {
        matches!(self, PromptMode::ClassPlusGenerated | PromptMode::ClassOnly)
    }

    pub fn uses_generated(self) -> bool {
        matches!(self, PromptMode::ClassPlusGenerated | PromptMode::GeneratedOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::ClassPlusGenerated => "cgil",
            PromptMode::ClassOnly => "class",
            PromptMode::GeneratedOnly => "generated",
            PromptMode::Unified => "unified",
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgil" => Ok(PromptMode::ClassPlusGenerated),
            "class" => Ok(PromptMode::ClassOnly),
            "generated" => Ok(PromptMode::GeneratedOnly),
            "unified" => Ok(PromptMode::Unified),
            other => Err(Error::Spec(format!("unknown prompt mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub n_ctx: usize,
    pub n_vg: usize,
    pub n_unified: usize,
    pub init_std: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PromptMode::ClassPlusGenerated,
            n_ctx: 1,
            n_vg: 1,
            n_unified: 2,
            init_std: 0.02,
        }
    }
}

impl PromptConfig {
    pub fn with_mode(mode: PromptMode) -> Self {
        PromptConfig {
            mode,
            ..PromptConfig::default()
        }
    }
}

/// What occupies one position of an assembled prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Generated,
    Context,
    Unified,
    ClassToken,
    Eot,
}

impl Slot {
    pub fn learnable(self) -> bool {
        matches!(self, Slot::Generated | Slot::Context | Slot::Unified)
    }
}

/// Token vectors of one prompt on the tape, with per-position provenance.
#[derive(Debug, Clone)]
pub struct AssembledPrompt {
    pub class_id: ClassId,
    pub seq: Var,
    pub slots: Vec<Slot>,
}

impl AssembledPrompt {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Learnable prompt state: per-class contexts `V`, the shared MLP producing
/// `V_G`, or the unified context, depending on the mode.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptParams {
    config: PromptConfig,
    d_tok: usize,
    d_txt: usize,
    seed: u64,
    classes: BTreeSet<ClassId>,
    contexts: BTreeMap<ClassId, Tensor>,
    mlp: Option<Mlp>,
    unified: Option<Tensor>,
}

/// Tape handles for the prompt parameters within one step.
#[derive(Debug, Clone)]
pub struct BoundPrompts {
    contexts: BTreeMap<ClassId, Var>,
    mlp: Option<Vec<BoundLinear>>,
    unified: Option<Var>,
}

impl PromptParams {
    pub fn new(config: PromptConfig, d_tok: usize, d_txt: usize, seed: u64) -> Result<Self> {
        if config.n_ctx == 0 || config.n_vg == 0 || config.n_unified == 0 {
            return Err(Error::Spec("prompt token counts must be positive".into()));
        }
        let mlp = if config.mode.uses_generated() {
            let mut rng = seeded(seed, stream::MLP_INIT);
            let mut mlp = Mlp::new(vec![
                Linear::init_normal(d_txt, d_txt, config.init_std, &mut rng),
                Linear::init_normal(d_txt, config.n_vg * d_tok, config.init_std, &mut rng),
            ])?;
            mlp.set_trainable(true);
            Some(mlp)
        } else {
            None
        };
        let unified = if config.mode == PromptMode::Unified {
            let mut rng = seeded(seed, stream::PROMPT_INIT | u64::from(u32::MAX));
            let n = config.n_unified;
            Some(Tensor::matrix(n, d_tok, normal_vec(&mut rng, n * d_tok, config.init_std))?.trainable())
        } else {
            None
        };
        Ok(PromptParams {
            config,
            d_tok,
            d_txt,
            seed,
            classes: BTreeSet::new(),
            contexts: BTreeMap::new(),
            mlp,
            unified,
        })
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    pub fn mode(&self) -> PromptMode {
        self.config.mode
    }

    pub fn d_tok(&self) -> usize {
        self.d_tok
    }

    pub fn d_txt(&self) -> usize {
        self.d_txt
    }

    pub fn classes(&self) -> &BTreeSet<ClassId> {
        &self.classes
    }

    pub fn contains(&self, class_id: ClassId) -> bool {
        self.classes.contains(&class_id)
    }

    pub fn context(&self, class_id: ClassId) -> Option<&Tensor> {
        self.contexts.get(&class_id)
    }

    pub fn context_mut(&mut self, class_id: ClassId) -> Option<&mut Tensor> {
        self.contexts.get_mut(&class_id)
    }

    pub fn mlp_mut(&mut self) -> Option<&mut Mlp> {
        self.mlp.as_mut()
    }

    pub fn mlp(&self) -> Option<&Mlp> {
        self.mlp.as_ref()
    }

    pub fn unified(&self) -> Option<&Tensor> {
        self.unified.as_ref()
    }

    /// Adds classes. Context rows are drawn from a per-class stream, so a
    /// row does not depend on which classes arrived before it.
    pub fn extend(&mut self, classes: &[ClassId]) -> Result<()> {
        if let Some(c) = classes.iter().find(|c| self.classes.contains(c)) {
            return Err(Error::State(format!("class {c} already has prompt parameters")));
        }
        for &c in classes {
            if self.config.mode.uses_contexts() {
                let mut rng = seeded(self.seed, stream::PROMPT_INIT | u64::from(c));
                let n = self.config.n_ctx * self.d_tok;
                let v = Tensor::matrix(self.config.n_ctx, self.d_tok, normal_vec(&mut rng, n, self.config.init_std))?;
                self.contexts.insert(c, v.trainable());
            }
            self.classes.insert(c);
        }
        Ok(())
    }

    /// Stops training a class's context rows for good.
    pub fn freeze_class(&mut self, class_id: ClassId) {
        if let Some(v) = self.contexts.get_mut(&class_id) {
            v.set_requires_grad(false);
        }
    }

    /// Freezes every parameter group (shared ones included).
    pub fn freeze_all(&mut self) {
        self.contexts.values_mut().for_each(|v| v.set_requires_grad(false));
        if let Some(m) = self.mlp.as_mut() {
            m.set_trainable(false);
        }
        if let Some(u) = self.unified.as_mut() {
            u.set_requires_grad(false);
        }
    }

    /// Names of the trainable parameter groups, e.g. `ctx/3`, `mlp/0.weight`.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if let Some(m) = &self.mlp {
            for (i, l) in m.layers.iter().enumerate() {
                if l.weight.requires_grad() {
                    names.push(format!("mlp/{i}.weight"));
                }
                if l.bias.requires_grad() {
                    names.push(format!("mlp/{i}.bias"));
                }
            }
        }
        if self.unified.as_ref().is_some_and(Tensor::requires_grad) {
            names.push("unified".into());
        }
        for (c, v) in &self.contexts {
            if v.requires_grad() {
                names.push(format!("ctx/{c}"));
            }
        }
        names
    }

    /// Trainable tensors in the same order as [`Self::trainable_names`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if let Some(m) = self.mlp.as_mut() {
            out.extend(m.params_mut().into_iter().filter(|t| t.requires_grad()));
        }
        if let Some(u) = self.unified.as_mut().filter(|u| u.requires_grad()) {
            out.push(u);
        }
        out.extend(self.contexts.values_mut().filter(|v| v.requires_grad()));
        out
    }

    /// Checksum over every parameter, trainable or not.
    pub fn checksum(&self) -> u64 {
        use crate::tensor::checksum_bits;
        let mut h = 0xcbf2_9ce4_8422_2325;
        if let Some(m) = &self.mlp {
            for t in m.params() {
                h = checksum_bits(t.data().iter().copied(), h);
            }
        }
        if let Some(u) = &self.unified {
            h = checksum_bits(u.data().iter().copied(), h);
        }
        for (c, v) in &self.contexts {
            h = checksum_bits([f64::from(*c)], h);
            h = checksum_bits(v.data().iter().copied(), h);
        }
        h
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPrompts {
        BoundPrompts {
            contexts: self.contexts.iter().map(|(&c, v)| (c, tape.leaf(v))).collect(),
            mlp: self.mlp.as_ref().map(|m| m.bind(tape)),
            unified: self.unified.as_ref().map(|u| tape.leaf(u)),
        }
    }

    pub fn absorb(&mut self, grads: &Gradients, bound: &BoundPrompts) -> Result<()> {
        for (c, v) in self.contexts.iter_mut() {
            if let Some(&var) = bound.contexts.get(c) {
                grads.accumulate_into(var, v)?;
            }
        }
        if let (Some(m), Some(b)) = (self.mlp.as_mut(), bound.mlp.as_ref()) {
            m.absorb(grads, b)?;
        }
        if let (Some(u), Some(b)) = (self.unified.as_mut(), bound.unified) {
            grads.accumulate_into(b, u)?;
        }
        Ok(())
    }

    /// `V_G = MLP(handcrafted)` reshaped to `n_vg x d_tok`.
    pub fn compute_vg(&self, tape: &mut Tape, bound: &BoundPrompts, handcrafted: &[f64]) -> Result<Var> {
        let mlp = bound
            .mlp
            .as_ref()
            .ok_or_else(|| Error::State(format!("mode {} has no generated context", self.mode())))?;
        let x = tape.constant(1, handcrafted.len(), handcrafted.to_vec())?;
        let flat = Mlp::forward(tape, mlp, x)?;
        if self.config.n_vg == 1 {
            return Ok(flat);
        }
        let rows = (0..self.config.n_vg)
            .map(|i| tape.slice_cols(flat, i * self.d_tok, self.d_tok))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)
    }

    /// Builds the token sequence for one class according to the mode, with
    /// class tokens and end-of-text appended.
    pub fn assemble_prompt(
        &self,
        tape: &mut Tape,
        bound: &BoundPrompts,
        class_id: ClassId,
        text: &TextEncoder,
    ) -> Result<AssembledPrompt> {
        let mut parts = Vec::new();
        let mut slots = Vec::new();
        let mode = self.mode();
        if mode.uses_generated() {
            parts.push(self.compute_vg(tape, bound, text.handcrafted(class_id)?)?);
            slots.extend(std::iter::repeat_n(Slot::Generated, self.config.n_vg));
        }
        if mode.uses_contexts() {
            let v = bound
                .contexts
                .get(&class_id)
                .ok_or_else(|| Error::State(format!("class {class_id} has no context row")))?;
            parts.push(*v);
            slots.extend(std::iter::repeat_n(Slot::Context, self.config.n_ctx));
        }
        if mode == PromptMode::Unified {
            parts.push(bound.unified.expect("unified mode binds its context"));
            slots.extend(std::iter::repeat_n(Slot::Unified, self.config.n_unified));
        }
        let cls = text.vocab.class_tokens(class_id)?;
        let mut ids = cls.to_vec();
        ids.push(super::EOT);
        parts.push(tape.constant(ids.len(), self.d_tok, text.tower.token_rows(&ids)?)?);
        slots.extend(std::iter::repeat_n(Slot::ClassToken, cls.len()));
        slots.push(Slot::Eot);
        let seq = tape.concat_rows(&parts)?;
        Ok(AssembledPrompt { class_id, seq, slots })
    }

    /// Assembles and encodes one class's prompt: a differentiable `1 x d_txt` node.
    pub fn encode_class(
        &self,
        tape: &mut Tape,
        tower: &BoundTower,
        bound: &BoundPrompts,
        class_id: ClassId,
        text: &TextEncoder,
    ) -> Result<Var> {
        let p = self.assemble_prompt(tape, bound, class_id, text)?;
        encode_prompt(tape, &p, text, tower)
    }

    /// Off-gradient text embeddings for `classes`, in order.
    pub fn class_embeddings(&self, classes: &[ClassId], text: &TextEncoder) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let tower = text.tower.bind(&mut tape);
        let bound = self.bind(&mut tape);
        classes
            .iter()
            .map(|&c| {
                let z = self.encode_class(&mut tape, &tower, &bound, c, text)?;
                Ok(tape.value(z).to_vec())
            })
            .collect()
    }
}

pub fn encode_prompt(tape: &mut Tape, prompt: &AssembledPrompt, text: &TextEncoder, tower: &BoundTower) -> Result<Var> {
    text.tower.encode(tape, tower, prompt.seq)
}
