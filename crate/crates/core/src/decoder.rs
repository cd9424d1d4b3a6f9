//! Tree decoder: two GRU stages around an attention module whose coverage
//! term is restricted to the root-to-node path, a symbol head over
//! `|Σ| + 2` classes (terminals, `E`, `ε`) and seven independent relation
//! probabilities.
//!
//! Parameters of a decoder with prefix `p`:
//!
//! | name | shape |
//! |------|-------|
//! | `p.embed` | `(|Σ| + 8) × embed` |
//! | `p.gru_a.*` | GRU, input `embed` |
//! | `p.gru_b.*` | GRU, input `C` |
//! | `p.att.wo`, `p.att.we` | `A × hidden`, `A × C` |
//! | `p.att.walpha`, `p.att.ww` | `A × 1` |
//! | `p.head.wp`, `p.head.wg`, `p.head.wt` | `D × embed`, `D × hidden`, `D × C` |
//! | `p.head.ws`, `p.head.bs` | `(|Σ| + 2) × D`, `(|Σ| + 2) × 1` |
//! | `p.head.wr`, `p.head.br` | `7 × D`, `7 × 1` |

use std::sync::Arc;

use rand::Rng;

use crate::encoder::{AnnotationGrid, Encoder, GrayImage, GridVar};
use crate::grammar::{Expr, NodeId, ParseTree, Relation, SymbolId, SymbolTable};
use crate::model::{AttentionMode, ModelConfig, ModelError};
use crate::numerics::{GruParams, GruVars, NumericsError, ParamId, ParamStore, Tape, Var};

/// The token whose embedding feeds a step: the previous terminal, the
/// relation that opened the branch, or the start marker at the root.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Partner {
    Start,
    Symbol(SymbolId),
    Relation(Relation),
}

impl Partner {
    /// Embedding row: terminals first, then the seven relations, then start.
    pub fn row(self, vocab: usize) -> usize {
        match self {
            Partner::Symbol(s) => s.0,
            Partner::Relation(r) => vocab + r.index(),
            Partner::Start => vocab + Relation::COUNT,
        }
    }
}

/// Context of one decoding step, as plain vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextState {
    /// `c_h`, width `hidden`.
    pub historical: Vec<f64>,
    pub partner: Partner,
    /// Attention accumulator `att`, width `L`.
    pub path_attention: Vec<f64>,
    /// Node being expanded.
    pub node: NodeId,
}

impl ContextState {
    pub fn root(hidden: usize, cells: usize) -> ContextState {
        ContextState {
            historical: vec![0.0; hidden],
            partner: Partner::Start,
            path_attention: vec![0.0; cells],
            node: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// Width `|Σ| + 2`: terminals, then `E`, then `ε`.
    pub p_symbol: Vec<f64>,
    pub p_relation: [f64; Relation::COUNT],
    /// `ξ`, width `L`.
    pub attention: Vec<f64>,
    /// `c_β`, width `hidden`.
    pub state: Vec<f64>,
    /// `Ω`, width `C`.
    pub context: Vec<f64>,
}

/// A step recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub c_o: Var,
    pub xi: Var,
    pub omega: Var,
    pub c_beta: Var,
    pub symbol_logits: Var,
    pub relation_logits: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InferenceBudget {
    /// Maximum number of decoding steps.
    pub max_nodes: usize,
    /// Maximum nesting of `E` nodes.
    pub max_depth: usize,
}

impl InferenceBudget {
    pub fn new(max_nodes: usize, max_depth: usize) -> Result<InferenceBudget, ModelError> {
        if max_nodes == 0 || max_depth == 0 {
            return Err(ModelError::InvalidConfig(
                "budget limits must be at least 1".into(),
            ));
        }
        Ok(InferenceBudget {
            max_nodes,
            max_depth,
        })
    }
}

impl Default for InferenceBudget {
    fn default() -> Self {
        InferenceBudget {
            max_nodes: 384,
            max_depth: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    prefix: String,
    vocab: usize,
    hidden: usize,
    channels: usize,
    embed: ParamId,
    gru_a: GruParams,
    gru_b: GruParams,
    att_o: ParamId,
    att_alpha: ParamId,
    att_e: ParamId,
    att_w: ParamId,
    head_p: ParamId,
    head_g: ParamId,
    head_t: ParamId,
    head_s: ParamId,
    bias_s: ParamId,
    head_r: ParamId,
    bias_r: ParamId,
}

/// Decoder weights loaded onto a tape.
#[derive(Clone, Copy, Debug)]
pub struct DecoderVars {
    embed: Var,
    gru_a: GruVars,
    gru_b: GruVars,
    att_o: Var,
    att_alpha: Var,
    att_e: Var,
    att_w: Var,
    head_p: Var,
    head_g: Var,
    head_t: Var,
    head_s: Var,
    bias_s: Var,
    head_r: Var,
    bias_r: Var,
}

/// Annotation grid with its attention projection `E W_eᵀ` precomputed.
#[derive(Clone, Copy, Debug)]
pub struct AttendedGrid {
    pub annotations: Var,
    projected: Var,
    pub cells: usize,
}

impl Decoder {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        config: &ModelConfig,
        vocab: usize,
        rng: &mut R,
    ) -> Result<Decoder, ModelError> {
        config.validate()?;
        let (e, h, c, a, d) = (
            config.embed,
            config.hidden,
            config.channels,
            config.attn_dim,
            config.head_dim,
        );
        let classes = vocab + 2;
        let rows = vocab + Relation::COUNT + 1;
        store.add_xavier(&format!("{prefix}.embed"), rows, e, e, e, rng)?;
        GruParams::init(store, &format!("{prefix}.gru_a"), e, h, rng)?;
        GruParams::init(store, &format!("{prefix}.gru_b"), c, h, rng)?;
        store.add_xavier(&format!("{prefix}.att.wo"), a, h, h, a, rng)?;
        store.add_xavier(&format!("{prefix}.att.walpha"), a, 1, 1, a, rng)?;
        store.add_xavier(&format!("{prefix}.att.we"), a, c, c, a, rng)?;
        store.add_xavier(&format!("{prefix}.att.ww"), a, 1, a, 1, rng)?;
        store.add_xavier(&format!("{prefix}.head.wp"), d, e, e, d, rng)?;
        store.add_xavier(&format!("{prefix}.head.wg"), d, h, h, d, rng)?;
        store.add_xavier(&format!("{prefix}.head.wt"), d, c, c, d, rng)?;
        store.add_xavier(&format!("{prefix}.head.ws"), classes, d, d, classes, rng)?;
        store.add_zeros(&format!("{prefix}.head.bs"), classes, 1)?;
        store.add_xavier(
            &format!("{prefix}.head.wr"),
            Relation::COUNT,
            d,
            d,
            Relation::COUNT,
            rng,
        )?;
        store.add_zeros(&format!("{prefix}.head.br"), Relation::COUNT, 1)?;
        Self::lookup(store, prefix, config, vocab)
    }

    pub fn lookup(
        store: &ParamStore,
        prefix: &str,
        config: &ModelConfig,
        vocab: usize,
    ) -> Result<Decoder, ModelError> {
        let (e, h, c, a, d) = (
            config.embed,
            config.hidden,
            config.channels,
            config.attn_dim,
            config.head_dim,
        );
        let classes = vocab + 2;
        let get = |name: &str, shape: (usize, usize)| -> Result<ParamId, NumericsError> {
            let full = format!("{prefix}.{name}");
            let id = store.id(&full)?;
            if store.value(id).shape() != shape {
                return Err(NumericsError::ShapeMismatch(format!(
                    "{full} is {:?}, configuration needs {shape:?}",
                    store.value(id).shape()
                )));
            }
            Ok(id)
        };
        let gru_a = GruParams::lookup(store, &format!("{prefix}.gru_a"))?;
        let gru_b = GruParams::lookup(store, &format!("{prefix}.gru_b"))?;
        if (gru_a.input, gru_a.hidden, gru_b.input, gru_b.hidden) != (e, h, c, h) {
            return Err(NumericsError::ShapeMismatch(format!(
                "{prefix} GRU widths do not match the configuration"
            ))
            .into());
        }
        Ok(Decoder {
            prefix: prefix.to_string(),
            vocab,
            hidden: h,
            channels: c,
            embed: get("embed", (vocab + Relation::COUNT + 1, e))?,
            gru_a,
            gru_b,
            att_o: get("att.wo", (a, h))?,
            att_alpha: get("att.walpha", (a, 1))?,
            att_e: get("att.we", (a, c))?,
            att_w: get("att.ww", (a, 1))?,
            head_p: get("head.wp", (d, e))?,
            head_g: get("head.wg", (d, h))?,
            head_t: get("head.wt", (d, c))?,
            head_s: get("head.ws", (classes, d))?,
            bias_s: get("head.bs", (classes, 1))?,
            head_r: get("head.wr", (Relation::COUNT, d))?,
            bias_r: get("head.br", (Relation::COUNT, 1))?,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Number of terminal symbols.
    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Symbol head width, `|Σ| + 2`.
    pub fn classes(&self) -> usize {
        self.vocab + 2
    }

    pub fn ext_class(&self) -> usize {
        self.vocab
    }

    pub fn eps_class(&self) -> usize {
        self.vocab + 1
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn load(&self, tape: &mut Tape, store: &ParamStore) -> DecoderVars {
        let mut p = |id| tape.param(store, id);
        let embed = p(self.embed);
        let att_o = p(self.att_o);
        let att_alpha = p(self.att_alpha);
        let att_e = p(self.att_e);
        let att_w = p(self.att_w);
        let head_p = p(self.head_p);
        let head_g = p(self.head_g);
        let head_t = p(self.head_t);
        let head_s = p(self.head_s);
        let bias_s = p(self.bias_s);
        let head_r = p(self.head_r);
        let bias_r = p(self.bias_r);
        DecoderVars {
            embed,
            gru_a: self.gru_a.load(tape, store),
            gru_b: self.gru_b.load(tape, store),
            att_o,
            att_alpha,
            att_e,
            att_w,
            head_p,
            head_g,
            head_t,
            head_s,
            bias_s,
            head_r,
            bias_r,
        }
    }

    /// Precomputes `E W_eᵀ` once per image.
    pub fn attend(
        &self,
        tape: &mut Tape,
        vars: &DecoderVars,
        grid: &GridVar,
    ) -> Result<AttendedGrid, ModelError> {
        let (cells, c) = tape.shape(grid.annotations);
        if c != self.channels {
            return Err(NumericsError::ShapeMismatch(format!(
                "grid width {c}, decoder expects {}",
                self.channels
            ))
            .into());
        }
        let projected = tape.matmul_t(grid.annotations, vars.att_e, false, true)?;
        Ok(AttendedGrid {
            annotations: grid.annotations,
            projected,
            cells,
        })
    }

    pub fn partner(
        &self,
        tape: &mut Tape,
        vars: &DecoderVars,
        partner: Partner,
    ) -> Result<Var, ModelError> {
        if let Partner::Symbol(s) = partner {
            if s.0 >= self.vocab {
                return Err(NumericsError::ShapeMismatch(format!(
                    "symbol {} outside the vocabulary",
                    s.0
                ))
                .into());
            }
        }
        Ok(tape.row(vars.embed, partner.row(self.vocab))?)
    }

    /// `ξ = softmax_i(w_wᵀ tanh(W_o c_o + att_i w_α + W_e e_i))`.
    pub fn attention_on_tape(
        &self,
        tape: &mut Tape,
        vars: &DecoderVars,
        grid: &AttendedGrid,
        c_o: Var,
        att: Var,
    ) -> Result<Var, ModelError> {
        if tape.shape(att) != (grid.cells, 1) {
            return Err(NumericsError::ShapeMismatch(format!(
                "attention accumulator {:?} for {} cells",
                tape.shape(att),
                grid.cells
            ))
            .into());
        }
        let q = tape.matmul(vars.att_o, c_o)?;
        let pre = tape.add_row_broadcast(grid.projected, q)?;
        let cov = tape.outer(att, vars.att_alpha);
        let pre = tape.add(pre, cov)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, vars.att_w)?;
        Ok(tape.softmax(scores))
    }

    /// One step from a partner embedding, historical state and attention
    /// accumulator, all recorded on the tape.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        vars: &DecoderVars,
        grid: &AttendedGrid,
        partner: Var,
        historical: Var,
        att: Var,
    ) -> Result<StepVars, ModelError> {
        if tape.shape(historical) != (self.hidden, 1) {
            return Err(NumericsError::ShapeMismatch(format!(
                "historical state {:?}, expected {}x1",
                tape.shape(historical),
                self.hidden
            ))
            .into());
        }
        let c_o = crate::numerics::gru_step(tape, &vars.gru_a, partner, historical)?;
        let xi = self.attention_on_tape(tape, vars, grid, c_o, att)?;
        let omega = tape.matmul_t(grid.annotations, xi, true, false)?;
        let c_beta = crate::numerics::gru_step(tape, &vars.gru_b, omega, c_o)?;
        let a = tape.matmul(vars.head_p, partner)?;
        let b = tape.matmul(vars.head_g, c_beta)?;
        let c = tape.matmul(vars.head_t, omega)?;
        let inner = tape.add_n(&[a, b, c])?;
        let symbol_logits = tape.linear(vars.head_s, inner, Some(vars.bias_s))?;
        let relation_logits = tape.linear(vars.head_r, inner, Some(vars.bias_r))?;
        Ok(StepVars {
            c_o,
            xi,
            omega,
            c_beta,
            symbol_logits,
            relation_logits,
        })
    }

    /// Evaluates one step from plain vectors.
    pub fn decode_step(
        &self,
        store: &ParamStore,
        grid: &AnnotationGrid,
        state: &ContextState,
    ) -> Result<StepOutput, ModelError> {
        if grid.channels != self.channels {
            return Err(NumericsError::ShapeMismatch(format!(
                "grid width {}, decoder expects {}",
                grid.channels, self.channels
            ))
            .into());
        }
        let mut tape = Tape::new();
        let vars = self.load(&mut tape, store);
        let annotations = tape.input(grid.len(), grid.channels, grid.features.clone())?;
        let g = self.attend(
            &mut tape,
            &vars,
            &GridVar {
                annotations,
                rows: grid.rows,
                cols: grid.cols,
            },
        )?;
        let partner = self.partner(&mut tape, &vars, state.partner)?;
        let historical = tape.vector(&state.historical);
        let att = tape.vector(&state.path_attention);
        let s = self.step_on_tape(&mut tape, &vars, &g, partner, historical, att)?;
        Ok(self.output(&mut tape, &s))
    }

    /// Reads probabilities and states of a recorded step.
    pub fn output(&self, tape: &mut Tape, s: &StepVars) -> StepOutput {
        let p_symbol = crate::numerics::softmax(tape.value(s.symbol_logits));
        let rel = crate::numerics::sigmoid_vec(tape.value(s.relation_logits));
        let mut p_relation = [0.0; Relation::COUNT];
        p_relation.copy_from_slice(&rel);
        StepOutput {
            p_symbol,
            p_relation,
            attention: tape.value(s.xi).to_vec(),
            state: tape.value(s.c_beta).to_vec(),
            context: tape.value(s.omega).to_vec(),
        }
    }
}

/// Attention weights from plain vectors.
pub fn attention_weights(
    decoder: &Decoder,
    store: &ParamStore,
    grid: &AnnotationGrid,
    c_o: &[f64],
    att: &[f64],
) -> Result<Vec<f64>, ModelError> {
    if att.len() != grid.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "{} accumulator entries for {} cells",
            att.len(),
            grid.len()
        ))
        .into());
    }
    if c_o.len() != decoder.hidden {
        return Err(NumericsError::ShapeMismatch(format!("c_o width {}", c_o.len())).into());
    }
    let mut tape = Tape::new();
    let vars = decoder.load(&mut tape, store);
    let annotations = tape.input(grid.len(), grid.channels, grid.features.clone())?;
    let g = decoder.attend(
        &mut tape,
        &vars,
        &GridVar {
            annotations,
            rows: grid.rows,
            cols: grid.cols,
        },
    )?;
    let c_o = tape.vector(c_o);
    let att = tape.vector(att);
    let xi = decoder.attention_on_tape(&mut tape, &vars, &g, c_o, att)?;
    Ok(tape.value(xi).to_vec())
}

/// A child's accumulator: the parent's plus the parent's attention.
pub fn accumulate_path(parent_att: &[f64], parent_xi: &[f64]) -> Result<Vec<f64>, ModelError> {
    if parent_att.len() != parent_xi.len() {
        return Err(NumericsError::ShapeMismatch(format!(
            "accumulator {} vs attention {}",
            parent_att.len(),
            parent_xi.len()
        ))
        .into());
    }
    Ok(parent_att
        .iter()
        .zip(parent_xi)
        .map(|(a, x)| a + x)
        .collect())
}

/// The same computation as [`Decoder::decode_step`], run with the reversed
/// decoder's parameters on a child's context.
pub fn reversed_step(
    reversed: &Decoder,
    store: &ParamStore,
    grid: &AnnotationGrid,
    child: &ContextState,
) -> Result<StepOutput, ModelError> {
    reversed.decode_step(store, grid, child)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// One inference step as seen by the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    /// Chosen class.
    pub class: usize,
    pub attention: Vec<f64>,
    pub accumulator: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub tree: ParseTree,
    pub truncated: bool,
    /// Steps in decoding order; step `k` expands the `k`-th S position of
    /// the tree in preorder.
    pub steps: Vec<StepTrace>,
}

#[derive(Clone, Debug)]
enum Draft {
    Pending,
    Sym(SymbolId, usize),
    Ext(Vec<(Relation, usize)>),
    Eps,
}

struct Pending {
    slot: usize,
    partner: Partner,
    historical: Var,
    att: Var,
    depth: usize,
}

fn draft_to_expr(slots: &[Draft], slot: usize) -> Expr {
    match &slots[slot] {
        Draft::Sym(s, next) => Expr::sym(*s, draft_to_expr(slots, *next)),
        Draft::Ext(branches) => Expr::Ext(
            branches
                .iter()
                .map(|&(r, c)| (r, draft_to_expr(slots, c)))
                .collect(),
        ),
        Draft::Eps | Draft::Pending => Expr::Eps,
    }
}

/// Stack-driven greedy decoding of one image.
///
/// A terminal opens one child with that terminal as partner; `E` opens a
/// child for every relation above 0.5 (the most probable one if none is),
/// in canonical order; `ε` closes the node. Decoding stops after
/// `budget.max_nodes` steps, and an `E` that would exceed
/// `budget.max_depth` is closed instead; either sets `truncated`.
pub fn infer_tree(
    encoder: &Encoder,
    decoder: &Decoder,
    store: &ParamStore,
    symbols: &Arc<SymbolTable>,
    mode: AttentionMode,
    image: &GrayImage,
    budget: InferenceBudget,
) -> Result<Inference, ModelError> {
    if symbols.len() != decoder.vocab {
        return Err(ModelError::InvalidConfig(format!(
            "symbol table has {} entries, decoder {}",
            symbols.len(),
            decoder.vocab
        )));
    }
    let mut tape = Tape::new();
    let grid = encoder.encode_on_tape(&mut tape, store, image)?;
    let vars = decoder.load(&mut tape, store);
    let g = decoder.attend(&mut tape, &vars, &grid)?;
    let zero_h = tape.zeros(decoder.hidden, 1);
    let zero_att = tape.zeros(g.cells, 1);
    let mut coverage = zero_att;

    let mut slots = vec![Draft::Pending];
    let mut stack = vec![Pending {
        slot: 0,
        partner: Partner::Start,
        historical: zero_h,
        att: zero_att,
        depth: 0,
    }];
    let mut steps = Vec::new();
    let mut truncated = false;

    while let Some(item) = stack.pop() {
        if steps.len() >= budget.max_nodes {
            slots[item.slot] = Draft::Eps;
            truncated = true;
            continue;
        }
        let att = match mode {
            AttentionMode::SyntaxAware => item.att,
            AttentionMode::Coverage => coverage,
        };
        let partner = decoder.partner(&mut tape, &vars, item.partner)?;
        let s = decoder.step_on_tape(&mut tape, &vars, &g, partner, item.historical, att)?;
        let class = argmax(tape.value(s.symbol_logits));
        steps.push(StepTrace {
            class,
            attention: tape.value(s.xi).to_vec(),
            accumulator: tape.value(att).to_vec(),
        });
        coverage = tape.add(coverage, s.xi)?;
        let child_att = match mode {
            AttentionMode::SyntaxAware => tape.add(item.att, s.xi)?,
            AttentionMode::Coverage => zero_att,
        };

        if class < decoder.vocab {
            let next = slots.len();
            slots.push(Draft::Pending);
            slots[item.slot] = Draft::Sym(SymbolId(class), next);
            stack.push(Pending {
                slot: next,
                partner: Partner::Symbol(SymbolId(class)),
                historical: s.c_beta,
                att: child_att,
                depth: item.depth,
            });
        } else if class == decoder.ext_class() {
            if item.depth + 1 > budget.max_depth {
                slots[item.slot] = Draft::Eps;
                truncated = true;
                continue;
            }
            let probs = crate::numerics::sigmoid_vec(tape.value(s.relation_logits));
            let mut rels: Vec<Relation> = Relation::ALL
                .iter()
                .copied()
                .filter(|r| probs[r.index()] > 0.5)
                .collect();
            if rels.is_empty() {
                rels.push(Relation::from_index(argmax(&probs)).expect("relation index"));
            }
            let mut branches = Vec::with_capacity(rels.len());
            for &r in &rels {
                branches.push((r, slots.len()));
                slots.push(Draft::Pending);
            }
            for &(r, slot) in branches.iter().rev() {
                stack.push(Pending {
                    slot,
                    partner: Partner::Relation(r),
                    historical: s.c_beta,
                    att: child_att,
                    depth: item.depth + 1,
                });
            }
            slots[item.slot] = Draft::Ext(branches);
        } else {
            slots[item.slot] = Draft::Eps;
        }
    }

    let expr = draft_to_expr(&slots, 0);
    let tree = ParseTree::from_expr(&expr, symbols.clone())
        .map_err(|e| ModelError::InvalidConfig(format!("decoded tree rejected: {e}")))?;
    Ok(Inference {
        tree,
        truncated,
        steps,
    })
}
