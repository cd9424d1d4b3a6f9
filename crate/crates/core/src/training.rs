//! Teacher-forced training: sample extraction, the four-part loss, the
//! learning-rate schedule and the epoch loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::decoder::{infer_tree, InferenceBudget, Partner, StepOutput, StepVars};
use crate::encoder::GrayImage;
use crate::evaluation::{espr, exprate, EvalError};
use crate::grammar::{
    CommandSet, Expr, GrammarError, NodeId, NodeKind, ParseTree, Relation, SymbolId,
};
use crate::model::{AttentionMode, ModelError, San};
use crate::numerics::{
    adadelta_update, kl_divergence, NumericsError, ParamStore, Tape, Var, DEFAULT_EPS, DEFAULT_RHO,
    PROB_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    DatasetEmpty,
    #[error("non-finite loss at epoch {epoch}, sample {sample}: {breakdown:?}")]
    NonFiniteLoss {
        epoch: usize,
        sample: usize,
        breakdown: LossBreakdown,
    },
    #[error("{what}: expected {expected}, got {got}")]
    AlignmentError {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("attention vectors of lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("unknown attention mode {0:?}")]
    UnknownMode(String),
    #[error("tree holds a placeholder symbol at node {0}")]
    Placeholder(NodeId),
    #[error("malformed sample sequence: {0}")]
    MalformedSamples(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{0}")]
    Io(String),
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(ModelError::Numerics(e))
    }
}

/// One teacher-forced decoding decision.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeSample {
    /// The S position in the tree.
    pub node: NodeId,
    pub partner: Partner,
    /// Index of the sample whose decision created this position.
    pub parent: Option<usize>,
    /// Class index: terminal id, then `E` = `|Σ|`, then `ε` = `|Σ| + 1`.
    pub target: usize,
    /// Branches of the `E` node when the target is `E`.
    pub relations: [bool; Relation::COUNT],
}

/// One sample per S position, in preorder.
pub fn tree_to_samples(tree: &ParseTree) -> Result<Vec<DecodeSample>, TrainError> {
    let vocab = tree.symbols().len();
    let mut sample_of = vec![usize::MAX; tree.len()];
    let mut out = Vec::new();
    // Preorder over S positions; ids are assigned in preorder already.
    for node in tree.nodes() {
        let (target, relations) = match &node.kind {
            NodeKind::E { .. } => continue,
            NodeKind::Sym { symbol, .. } => {
                if symbol.is_placeholder() || symbol.0 >= vocab {
                    return Err(TrainError::Placeholder(node.id));
                }
                (symbol.0, [false; Relation::COUNT])
            }
            NodeKind::Ext { ext } => {
                let mut mask = [false; Relation::COUNT];
                if let Some(NodeKind::E { branches }) = tree.node(*ext).map(|n| &n.kind) {
                    for (r, _) in branches {
                        mask[r.index()] = true;
                    }
                }
                (vocab, mask)
            }
            NodeKind::Eps => (vocab + 1, [false; Relation::COUNT]),
        };
        let (partner, parent) = match node.parent {
            None => (Partner::Start, None),
            Some(p) => match &tree.nodes()[p].kind {
                NodeKind::Sym { symbol, .. } => (Partner::Symbol(*symbol), Some(sample_of[p])),
                NodeKind::E { branches } => {
                    let rel = branches
                        .iter()
                        .find(|(_, c)| *c == node.id)
                        .map(|(r, _)| *r)
                        .expect("child listed under its parent");
                    let owner = tree.nodes()[p].parent.expect("E node has an S parent");
                    (Partner::Relation(rel), Some(sample_of[owner]))
                }
                _ => unreachable!("S position under a non-producing node"),
            },
        };
        sample_of[node.id] = out.len();
        out.push(DecodeSample {
            node: node.id,
            partner,
            parent,
            target,
            relations,
        });
    }
    Ok(out)
}

/// Rebuilds the expression by replaying sample targets through the grammar.
pub fn samples_to_expr(samples: &[DecodeSample], vocab: usize) -> Result<Expr, TrainError> {
    fn go(samples: &[DecodeSample], vocab: usize, pos: &mut usize) -> Result<Expr, TrainError> {
        let s = samples
            .get(*pos)
            .ok_or_else(|| TrainError::MalformedSamples("ran out of samples".into()))?;
        *pos += 1;
        if s.target < vocab {
            Ok(Expr::sym(SymbolId(s.target), go(samples, vocab, pos)?))
        } else if s.target == vocab {
            let mut branches = Vec::new();
            for r in Relation::ALL {
                if s.relations[r.index()] {
                    branches.push((r, go(samples, vocab, pos)?));
                }
            }
            Ok(Expr::Ext(branches))
        } else if s.target == vocab + 1 {
            Ok(Expr::Eps)
        } else {
            Err(TrainError::MalformedSamples(format!(
                "class {} out of range",
                s.target
            )))
        }
    }
    let mut pos = 0;
    let e = go(samples, vocab, &mut pos)?;
    if pos != samples.len() {
        return Err(TrainError::MalformedSamples(format!(
            "{} samples left over",
            samples.len() - pos
        )));
    }
    Ok(e)
}

/// Children of every sample, in order.
fn children_of(samples: &[DecodeSample]) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); samples.len()];
    for (k, s) in samples.iter().enumerate() {
        if let Some(p) = s.parent {
            children[p].push(k);
        }
    }
    children
}

/// Attention self-regularizer.
///
/// The reversed step at a child predicts the class its parent decoded, so
/// each child's `ξ̂` is compared with the parent's forward `ξ` through
/// `KL(ξ̂ ‖ ξ)`. Children of one node are averaged; the result is the mean
/// over nodes that have children, or 0 if none do.
pub fn regularization_loss(
    forward: &[Vec<f64>],
    reversed: &[Option<Vec<f64>>],
    samples: &[DecodeSample],
) -> Result<f64, TrainError> {
    if forward.len() != samples.len() || reversed.len() != samples.len() {
        return Err(TrainError::AlignmentError {
            what: "attention vectors per sample",
            expected: samples.len(),
            got: forward.len().min(reversed.len()),
        });
    }
    let mut total = 0.0;
    let mut parents = 0usize;
    for (p, kids) in children_of(samples).iter().enumerate() {
        if kids.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for &k in kids {
            let rev = reversed[k].as_ref().ok_or(TrainError::AlignmentError {
                what: "reversed attention for a child",
                expected: 1,
                got: 0,
            })?;
            if rev.len() != forward[p].len() {
                return Err(TrainError::LengthMismatch(rev.len(), forward[p].len()));
            }
            sum += kl_divergence(rev, &forward[p]);
        }
        total += sum / kids.len() as f64;
        parents += 1;
    }
    Ok(if parents == 0 {
        0.0
    } else {
        total / parents as f64
    })
}

/// The four loss parts and their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub symbol: f64,
    pub relation: f64,
    pub symbol_rev: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(symbol: f64, relation: f64, symbol_rev: f64, reg: f64) -> LossBreakdown {
        LossBreakdown {
            symbol,
            relation,
            symbol_rev,
            reg,
            total: symbol + relation + symbol_rev + reg,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.symbol,
            self.relation,
            self.symbol_rev,
            self.reg,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn ln_clamped(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Loss parts from step outputs.
///
/// `symbol` is the mean cross-entropy over all samples; `relation` sums
/// the seven binary cross-entropies of a sample and averages over samples
/// that target `E`; `symbol_rev` averages the reversed cross-entropy
/// against the parent's class over samples with a parent.
pub fn sample_losses(
    samples: &[DecodeSample],
    forward: &[StepOutput],
    reversed: &[Option<StepOutput>],
) -> Result<LossBreakdown, TrainError> {
    for (what, got) in [
        ("forward outputs", forward.len()),
        ("reversed outputs", reversed.len()),
    ] {
        if got != samples.len() {
            return Err(TrainError::AlignmentError {
                what,
                expected: samples.len(),
                got,
            });
        }
    }
    let vocab = forward
        .first()
        .map_or(0, |o| o.p_symbol.len().saturating_sub(2));
    let mut symbol = 0.0;
    let mut relation = 0.0;
    let mut ext = 0usize;
    let mut rev = 0.0;
    let mut rev_n = 0usize;
    for (k, s) in samples.iter().enumerate() {
        let out = &forward[k];
        let p = *out
            .p_symbol
            .get(s.target)
            .ok_or(TrainError::AlignmentError {
                what: "target class",
                expected: out.p_symbol.len(),
                got: s.target,
            })?;
        symbol -= ln_clamped(p);
        if s.target == vocab {
            ext += 1;
            for (q, t) in out.p_relation.iter().zip(s.relations) {
                relation -= if t {
                    ln_clamped(*q)
                } else {
                    ln_clamped(1.0 - q)
                };
            }
        }
        match (s.parent, &reversed[k]) {
            (Some(parent), Some(r)) => {
                rev -= ln_clamped(r.p_symbol[samples[parent].target]);
                rev_n += 1;
            }
            (None, None) => {}
            _ => {
                return Err(TrainError::AlignmentError {
                    what: "reversed output for a sample with a parent",
                    expected: usize::from(s.parent.is_some()),
                    got: usize::from(reversed[k].is_some()),
                })
            }
        }
    }
    let fwd_xi: Vec<Vec<f64>> = forward.iter().map(|o| o.attention.clone()).collect();
    let rev_xi: Vec<Option<Vec<f64>>> = reversed
        .iter()
        .map(|o| o.as_ref().map(|o| o.attention.clone()))
        .collect();
    let reg = regularization_loss(&fwd_xi, &rev_xi, samples)?;
    let mean = |v: f64, n: usize| if n == 0 { 0.0 } else { v / n as f64 };
    Ok(LossBreakdown::new(
        mean(symbol, samples.len()),
        mean(relation, ext),
        mean(rev, rev_n),
        reg,
    ))
}

/// A tree's loss recorded on a tape.
#[derive(Clone, Debug)]
pub struct TreeLoss {
    /// `[symbol, relation, symbol_rev, reg]`.
    pub parts: [Var; 4],
    pub total: Var,
    pub forward: Vec<StepVars>,
    pub reversed: Vec<Option<StepVars>>,
    /// Attention accumulator fed to each forward step.
    pub accumulators: Vec<Var>,
}

impl TreeLoss {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let [a, b, c, d] = self.parts.map(|v| tape.scalar(v));
        LossBreakdown::new(a, b, c, d)
    }
}

fn mean_or_zero(tape: &mut Tape, terms: &[Var], negate: bool) -> Result<Var, NumericsError> {
    if terms.is_empty() {
        return Ok(tape.zeros(1, 1));
    }
    let s = tape.add_n(terms)?;
    let k = if negate { -1.0 } else { 1.0 } / terms.len() as f64;
    Ok(tape.scale(s, k))
}

/// Teacher-forced forward and reversed passes over one tree, with every
/// loss part on the tape.
pub fn tree_loss(
    model: &San,
    store: &ParamStore,
    tape: &mut Tape,
    image: &GrayImage,
    samples: &[DecodeSample],
) -> Result<TreeLoss, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::MalformedSamples("no samples".into()));
    }
    let (dec, rev) = (&model.decoder, &model.reversed);
    let grid = model.encoder.encode_on_tape(tape, store, image)?;
    let fv = dec.load(tape, store);
    let rv = rev.load(tape, store);
    let fg = dec.attend(tape, &fv, &grid)?;
    let rg = rev.attend(tape, &rv, &grid)?;
    let zero_h = tape.zeros(dec.hidden(), 1);
    let zero_att = tape.zeros(fg.cells, 1);

    let mut forward: Vec<StepVars> = Vec::with_capacity(samples.len());
    let mut reversed = Vec::with_capacity(samples.len());
    let mut accumulators: Vec<Var> = Vec::with_capacity(samples.len());
    let mut coverage = zero_att;
    for s in samples {
        let historical = s.parent.map_or(zero_h, |p| forward[p].c_beta);
        let att = match (model.config.attention, s.parent) {
            (AttentionMode::Coverage, _) => coverage,
            (AttentionMode::SyntaxAware, None) => zero_att,
            (AttentionMode::SyntaxAware, Some(p)) => tape.add(accumulators[p], forward[p].xi)?,
        };
        let partner = dec.partner(tape, &fv, s.partner)?;
        let step = dec.step_on_tape(tape, &fv, &fg, partner, historical, att)?;
        coverage = tape.add(coverage, step.xi)?;
        reversed.push(match s.parent {
            None => None,
            Some(_) => {
                let rp = rev.partner(tape, &rv, s.partner)?;
                Some(rev.step_on_tape(tape, &rv, &rg, rp, historical, att)?)
            }
        });
        forward.push(step);
        accumulators.push(att);
    }

    let vocab = dec.vocab();
    let mut sym_terms = Vec::with_capacity(samples.len());
    let mut rel_terms = Vec::new();
    let mut rev_terms = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        let ls = tape.log_softmax(forward[k].symbol_logits);
        sym_terms.push(tape.pick(ls, s.target)?);
        if s.target == vocab {
            let t: Vec<f64> = s
                .relations
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect();
            rel_terms.push(tape.bce_with_logits(forward[k].relation_logits, &t)?);
        }
        if let (Some(p), Some(r)) = (s.parent, reversed[k]) {
            let ls = tape.log_softmax(r.symbol_logits);
            rev_terms.push(tape.pick(ls, samples[p].target)?);
        }
    }
    let mut reg_terms = Vec::new();
    for (p, kids) in children_of(samples).iter().enumerate() {
        if kids.is_empty() {
            continue;
        }
        let mut kl = Vec::with_capacity(kids.len());
        for &k in kids {
            let r = reversed[k].expect("child has a reversed step");
            kl.push(tape.kl_div(r.xi, forward[p].xi)?);
        }
        reg_terms.push(mean_or_zero(tape, &kl, false)?);
    }
    let parts = [
        mean_or_zero(tape, &sym_terms, true)?,
        mean_or_zero(tape, &rel_terms, false)?,
        mean_or_zero(tape, &rev_terms, true)?,
        mean_or_zero(tape, &reg_terms, false)?,
    ];
    let total = tape.add_n(&parts)?;
    Ok(TreeLoss {
        parts,
        total,
        forward,
        reversed,
        accumulators,
    })
}

/// Warmup over the first epoch, then cosine decay to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
}

impl LrSchedule {
    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }
}

pub fn lr_scale(step: usize, schedule: &LrSchedule) -> f64 {
    let warm = schedule.steps_per_epoch.max(1);
    let total = schedule.total_steps().max(warm);
    if step <= warm {
        return step as f64 / warm as f64;
    }
    if total == warm {
        return 1.0;
    }
    let progress = ((step - warm) as f64 / (total - warm) as f64).min(1.0);
    0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

pub fn ablation_mode(name: &str) -> Result<AttentionMode, TrainError> {
    name.parse()
        .map_err(|_| TrainError::UnknownMode(name.to_string()))
}

#[derive(Clone, Debug)]
pub struct TrainPair {
    pub image: GrayImage,
    pub tree: ParseTree,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Trees per optimizer update.
    pub batch: usize,
    pub rho: f64,
    pub eps: f64,
    /// Training-set ExpRate is measured every this many epochs and after
    /// the last; 0 disables it.
    pub eval_every: usize,
    pub budget: InferenceBudget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            seed: 0,
            batch: 8,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
            eval_every: 0,
            budget: InferenceBudget::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean parts over the epoch's trees.
    pub loss: LossBreakdown,
    /// Scale used by the epoch's last update.
    pub lr_scale: f64,
    pub train_exprate: Option<f64>,
    pub train_espr: Option<f64>,
}

impl EpochMetrics {
    pub const TSV_HEADER: &'static str =
        "epoch\tsymbol\trelation\tsymbol_rev\treg\ttotal\tlr_scale\ttrain_exprate\ttrain_espr";

    pub fn to_tsv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::from("-"), |v| format!("{v:.2}"));
        let l = &self.loss;
        let mut out = String::new();
        let _ = write!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}",
            self.epoch,
            l.symbol,
            l.relation,
            l.symbol_rev,
            l.reg,
            l.total,
            self.lr_scale,
            opt(self.train_exprate),
            opt(self.train_espr)
        );
        out
    }
}

/// Greedy predictions for a set of images.
pub fn predict_all(
    model: &San,
    images: &[&GrayImage],
    budget: InferenceBudget,
) -> Result<Vec<ParseTree>, TrainError> {
    images
        .iter()
        .map(|img| {
            Ok(infer_tree(
                &model.encoder,
                &model.decoder,
                &model.store,
                &model.symbols,
                model.config.attention,
                img,
                budget,
            )?
            .tree)
        })
        .collect()
}

/// ExpRate and ESPR of greedy predictions against the pairs' trees.
pub fn score(
    model: &San,
    data: &[TrainPair],
    budget: InferenceBudget,
) -> Result<(f64, f64), TrainError> {
    let images: Vec<&GrayImage> = data.iter().map(|p| &p.image).collect();
    let predicted = predict_all(model, &images, budget)?;
    let truth: Vec<ParseTree> = data.iter().map(|p| p.tree.clone()).collect();
    Ok((
        exprate(&predicted, &truth, 0, &CommandSet::default())?,
        espr(&predicted, &truth)?,
    ))
}

/// Runs `config.epochs` epochs of shuffled, gradient-accumulated Adadelta
/// updates. `on_epoch` sees each epoch's metrics and the current model.
pub fn train<F>(
    model: &mut San,
    data: &[TrainPair],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochMetrics>, TrainError>
where
    F: FnMut(&EpochMetrics, &San) -> Result<(), TrainError>,
{
    if data.is_empty() {
        return Err(TrainError::DatasetEmpty);
    }
    let batch = config.batch.max(1);
    let samples: Vec<Vec<DecodeSample>> = data
        .iter()
        .map(|p| tree_to_samples(&p.tree))
        .collect::<Result<_, _>>()?;
    let schedule = LrSchedule {
        total_epochs: config.epochs,
        steps_per_epoch: data.len().div_ceil(batch),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut update = 0usize;
    let mut history = Vec::with_capacity(config.epochs);
    model.store.zero_grads();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut scale = 0.0;
        for chunk in order.chunks(batch) {
            let seed = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut tape = Tape::new();
                let loss = tree_loss(model, &model.store, &mut tape, &data[i].image, &samples[i])?;
                let b = loss.breakdown(&tape);
                if !b.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        sample: i,
                        breakdown: b,
                    });
                }
                for (s, v) in sums
                    .iter_mut()
                    .zip([b.symbol, b.relation, b.symbol_rev, b.reg])
                {
                    *s += v;
                }
                tape.backward(loss.total, seed, &mut model.store);
            }
            update += 1;
            scale = lr_scale(update, &schedule);
            adadelta_update(&mut model.store, config.rho, config.eps, scale);
        }
        let n = data.len() as f64;
        let loss = LossBreakdown::new(sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n);
        let evaluate =
            config.eval_every > 0 && (epoch % config.eval_every == 0 || epoch == config.epochs);
        let (train_exprate, train_espr) = if evaluate {
            let (e, s) = score(model, data, config.budget)?;
            (Some(e), Some(s))
        } else {
            (None, None)
        };
        let metrics = EpochMetrics {
            epoch,
            loss,
            lr_scale: scale,
            train_exprate,
            train_espr,
        };
        on_epoch(&metrics, model)?;
        history.push(metrics);
    }
    Ok(history)
}
