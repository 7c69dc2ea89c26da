//! Nine classifier kinds trained on realization strength vectors.
//!
//! Every trainer takes raw (unstandardized) feature rows, fits a per-column
//! standardizer on those rows only, and stores it in the model; prediction
//! re-applies the training statistics. `Failed` is class 1 throughout.
//! Probability-like scores threshold at 0.5 with exactly 0.5 classified
//! stable; the SVC thresholds its decision value at 0. Ensembles consume base
//! scores through [`TrainedModel::prob_score`], which squashes the SVC
//! decision value through a sigmoid so all six bases share the [0, 1] scale.

use crate::campaign::Dataset;
use crate::error::{Error, Result};
use crate::eval::{repeated_kfold, FoldSplit};
use crate::rng::substream;
use crate::stability::StabilityLabel;
use crate::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Raw feature rows with their labels, in campaign order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<Real>>,
    pub labels: Vec<StabilityLabel>,
}

impl FeatureMatrix {
    /// Cell strengths in canonical grid order as the feature vector.
    pub fn from_dataset(data: &Dataset) -> FeatureMatrix {
        FeatureMatrix {
            rows: data.records.iter().map(|r| r.values.clone()).collect(),
            labels: data.labels(),
        }
    }
}

fn check_rect(x: &[Vec<Real>], y: &[StabilityLabel]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::domain("empty training set"));
    }
    if x.len() != y.len() {
        return Err(Error::domain("feature rows and labels differ in length"));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::domain("feature rows must share a positive width"));
    }
    Ok(d)
}

fn require_two_classes(y: &[StabilityLabel]) -> Result<()> {
    let pos = y.iter().filter(|l| l.is_failed()).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::domain("training set contains a single class"));
    }
    Ok(())
}

fn to_y01(y: &[StabilityLabel]) -> Vec<u8> {
    y.iter().map(|l| l.as_byte()).collect()
}

fn sigmoid(z: Real) -> Real {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// standardization

/// Per-column (mean, stdev) fitted on training rows; population stdev.
/// Constant columns pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<Real>,
    pub stdevs: Vec<Real>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<Real>]) -> Result<Standardizer> {
        if rows.is_empty() {
            return Err(Error::domain("standardizer needs at least one row"));
        }
        let d = rows[0].len();
        let n = rows.len() as Real;
        let mut means = vec![0.0; d];
        for r in rows {
            for (m, &v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![0.0; d];
        for r in rows {
            for ((v, &x), &m) in vars.iter_mut().zip(r).zip(&means) {
                *v += (x - m) * (x - m);
            }
        }
        let mut stdevs = Vec::with_capacity(d);
        for (j, v) in vars.iter().enumerate() {
            let var = v / n;
            if var <= 0.0 {
                // constant column: identity transform
                means[j] = 0.0;
                stdevs.push(1.0);
            } else {
                stdevs.push(var.sqrt());
            }
        }
        Ok(Standardizer { means, stdevs })
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn apply_row(&self, row: &[Real]) -> Vec<Real> {
        row.iter()
            .zip(&self.means)
            .zip(&self.stdevs)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, rows: &[Vec<Real>]) -> Vec<Vec<Real>> {
        rows.iter().map(|r| self.apply_row(r)).collect()
    }
}

// ---------------------------------------------------------------------------
// hyperparameters

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub c: Real,
    pub max_epochs: usize,
    pub tol: Real,
}

impl Default for LrParams {
    fn default() -> Self {
        LrParams {
            c: 1.0,
            max_epochs: 5000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams { k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Reduced-error pruning on a held-out fifth of the training rows.
    pub prune: bool,
}

impl Default for DtParams {
    fn default() -> Self {
        DtParams {
            max_depth: 12,
            min_leaf: 2,
            prune: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    Linear,
    /// RBF kernel; `None` gamma defaults to 1/(n_features · mean feature
    /// variance of the standardized training rows).
    Rbf {
        gamma: Option<Real>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvcParams {
    pub c: Real,
    pub kernel: Kernel,
    pub tol: Real,
    pub max_iter: usize,
}

impl Default for SvcParams {
    fn default() -> Self {
        SvcParams {
            c: 1.0,
            kernel: Kernel::Rbf { gamma: None },
            tol: 1e-3,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FeatureSubset {
    All,
    /// round(sqrt(n_features)), at least 1.
    Sqrt,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub subset: FeatureSubset,
    pub tree: DtParams,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 100,
            bootstrap: true,
            subset: FeatureSubset::Sqrt,
            tree: DtParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnbParams {
    /// Variance floor as a fraction of the mean feature variance.
    pub variance_floor_ratio: Real,
}

impl Default for GnbParams {
    fn default() -> Self {
        GnbParams {
            variance_floor_ratio: 1e-9,
        }
    }
}

/// Hyperparameters of the six base models used by the ensembles, in the
/// fixed order LR, KNN, DT, SVC, RF, GNB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct BaseParams {
    pub lr: LrParams,
    pub knn: KnnParams,
    pub dt: DtParams,
    pub svc: SvcParams,
    pub rf: RfParams,
    pub gnb: GnbParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackParams {
    pub base: BaseParams,
    /// Out-of-fold fold count for the meta-features.
    pub folds: usize,
    /// Candidate penalties for the meta logistic regression, ascending.
    pub meta_c_grid: Vec<Real>,
    /// Fold count of the meta-model's penalty selection.
    pub meta_folds: usize,
}

impl Default for StackParams {
    fn default() -> Self {
        StackParams {
            base: BaseParams::default(),
            folds: 10,
            meta_c_grid: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            meta_folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagParams {
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub rf: RfParams,
}

impl Default for BagParams {
    fn default() -> Self {
        BagParams {
            n_estimators: 10,
            bootstrap: true,
            rf: RfParams {
                n_trees: 50,
                ..RfParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct VoteParams {
    pub base: BaseParams,
}

// ---------------------------------------------------------------------------
// model kinds

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Lr,
    Knn,
    Dt,
    Svc,
    Rf,
    Gnb,
    Stack,
    Bag,
    Vote,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Knn => "knn",
            ModelKind::Dt => "dt",
            ModelKind::Svc => "svc",
            ModelKind::Rf => "rf",
            ModelKind::Gnb => "gnb",
            ModelKind::Stack => "stack",
            ModelKind::Bag => "bag",
            ModelKind::Vote => "vote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub standardizer: Standardizer,
    pub weights: Vec<Real>,
    pub intercept: Real,
    pub params: LrParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub standardizer: Standardizer,
    pub exemplars: Vec<Vec<Real>>,
    pub labels: Vec<u8>,
    pub params: KnnParams,
}

/// Tree node; children index into the arena. Split nodes keep their class-1
/// fraction so pruning can collapse them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        p1: Real,
    },
    Split {
        feature: usize,
        threshold: Real,
        p1: Real,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
}

impl Tree {
    fn score_row(&self, row: &[Real]) -> Real {
        let mut at = self.root;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { p1 } => return *p1,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtModel {
    pub standardizer: Standardizer,
    pub tree: Tree,
    pub params: DtParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcModel {
    pub standardizer: Standardizer,
    pub support_vectors: Vec<Vec<Real>>,
    /// α_i · y_i per support vector.
    pub dual_coef: Vec<Real>,
    pub bias: Real,
    pub gamma: Real,
    pub params: SvcParams,
    /// Largest KKT violation at termination.
    pub final_violation: Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfModel {
    pub standardizer: Standardizer,
    pub trees: Vec<Tree>,
    pub params: RfParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnbModel {
    pub standardizer: Standardizer,
    /// log prior per class, [stable, failed].
    pub log_priors: [Real; 2],
    /// Per-class per-feature means, [stable, failed].
    pub means: [Vec<Real>; 2],
    pub variances: [Vec<Real>; 2],
    pub params: GnbParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub bases: Vec<TrainedModel>,
    pub meta: LrModel,
    pub meta_c: Real,
    pub params: StackParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagModel {
    pub estimators: Vec<RfModel>,
    pub params: BagParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteModel {
    pub bases: Vec<TrainedModel>,
    pub params: VoteParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrainedModel {
    Lr(LrModel),
    Knn(KnnModel),
    Dt(DtModel),
    Svc(SvcModel),
    Rf(RfModel),
    Gnb(GnbModel),
    Stack(Box<StackModel>),
    Bag(BagModel),
    Vote(Box<VoteModel>),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Lr(_) => ModelKind::Lr,
            TrainedModel::Knn(_) => ModelKind::Knn,
            TrainedModel::Dt(_) => ModelKind::Dt,
            TrainedModel::Svc(_) => ModelKind::Svc,
            TrainedModel::Rf(_) => ModelKind::Rf,
            TrainedModel::Gnb(_) => ModelKind::Gnb,
            TrainedModel::Stack(_) => ModelKind::Stack,
            TrainedModel::Bag(_) => ModelKind::Bag,
            TrainedModel::Vote(_) => ModelKind::Vote,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Lr(m) => m.standardizer.n_features(),
            TrainedModel::Knn(m) => m.standardizer.n_features(),
            TrainedModel::Dt(m) => m.standardizer.n_features(),
            TrainedModel::Svc(m) => m.standardizer.n_features(),
            TrainedModel::Rf(m) => m.standardizer.n_features(),
            TrainedModel::Gnb(m) => m.standardizer.n_features(),
            TrainedModel::Stack(m) => m.bases[0].n_features(),
            TrainedModel::Bag(m) => m.estimators[0].standardizer.n_features(),
            TrainedModel::Vote(m) => m.bases[0].n_features(),
        }
    }

    fn check_rows(&self, rows: &[Vec<Real>]) -> Result<()> {
        let d = self.n_features();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::domain(format!(
                "prediction rows must have width {d}"
            )));
        }
        Ok(())
    }

    /// Continuous class-1 score: posterior-like in [0, 1] for every kind
    /// except the SVC, which reports its decision value.
    pub fn predict_score(&self, rows: &[Vec<Real>]) -> Result<Vec<Real>> {
        self.check_rows(rows)?;
        Ok(rows.iter().map(|r| self.score_row(r)).collect())
    }

    /// Class-1 score mapped to [0, 1] for every kind (sigmoid of the SVC
    /// decision value); what the ensembles consume.
    pub fn prob_score(&self, rows: &[Vec<Real>]) -> Result<Vec<Real>> {
        let mut s = self.predict_score(rows)?;
        if matches!(self, TrainedModel::Svc(_)) {
            for v in &mut s {
                *v = sigmoid(*v);
            }
        }
        Ok(s)
    }

    fn score_row(&self, row: &[Real]) -> Real {
        match self {
            TrainedModel::Lr(m) => m.score_row(row),
            TrainedModel::Knn(m) => m.score_row(row),
            TrainedModel::Dt(m) => m.tree.score_row(&m.standardizer.apply_row(row)),
            TrainedModel::Svc(m) => m.decision_row(row),
            TrainedModel::Rf(m) => m.score_row(row),
            TrainedModel::Gnb(m) => m.posterior_row(row),
            TrainedModel::Stack(m) => {
                let meta_row: Vec<Real> = m.bases.iter().map(|b| b.prob_row(row)).collect();
                m.meta.score_row(&meta_row)
            }
            TrainedModel::Bag(m) => {
                m.estimators.iter().map(|e| e.score_row(row)).sum::<Real>()
                    / m.estimators.len() as Real
            }
            TrainedModel::Vote(m) => {
                m.bases.iter().map(|b| b.prob_row(row)).sum::<Real>() / m.bases.len() as Real
            }
        }
    }

    fn prob_row(&self, row: &[Real]) -> Real {
        let s = self.score_row(row);
        if matches!(self, TrainedModel::Svc(_)) {
            sigmoid(s)
        } else {
            s
        }
    }

    fn label_row(&self, row: &[Real]) -> StabilityLabel {
        let failed = match self {
            // hard votes: a tie goes to stable
            TrainedModel::Bag(m) => {
                let votes = m
                    .estimators
                    .iter()
                    .filter(|e| e.score_row(row) > 0.5)
                    .count();
                2 * votes > m.estimators.len()
            }
            TrainedModel::Vote(m) => {
                let votes = m
                    .bases
                    .iter()
                    .filter(|b| b.label_row(row) == StabilityLabel::Failed)
                    .count();
                2 * votes > m.bases.len()
            }
            TrainedModel::Svc(_) => self.score_row(row) > 0.0,
            _ => self.score_row(row) > 0.5,
        };
        if failed {
            StabilityLabel::Failed
        } else {
            StabilityLabel::Stable
        }
    }

    /// Hard labels; the score boundary itself (0.5, or 0 for the SVC)
    /// classifies stable.
    pub fn predict(&self, rows: &[Vec<Real>]) -> Result<Vec<StabilityLabel>> {
        self.check_rows(rows)?;
        Ok(rows.iter().map(|r| self.label_row(r)).collect())
    }
}

// ---------------------------------------------------------------------------
// logistic regression

/// Objective ½wᵀw + C·Σ log(1+exp(−y·f)) and its gradient at (w, b), with
/// y ∈ {−1, +1} and f = w·x + b. The intercept is unpenalized.
pub fn lr_objective_gradient(
    x: &[Vec<Real>],
    y_pm: &[Real],
    c: Real,
    w: &[Real],
    b: Real,
) -> (Real, Vec<Real>, Real) {
    let log1pexp = |t: Real| {
        if t > 30.0 {
            t
        } else {
            t.exp().ln_1p()
        }
    };
    let mut obj = 0.5 * w.iter().map(|v| v * v).sum::<Real>();
    let mut gw = w.to_vec();
    let mut gb = 0.0;
    for (row, &y) in x.iter().zip(y_pm) {
        let f: Real = row.iter().zip(w).map(|(&a, &b)| a * b).sum::<Real>() + b;
        obj += c * log1pexp(-y * f);
        let coef = c * (-y) * sigmoid(-y * f);
        for (g, &v) in gw.iter_mut().zip(row) {
            *g += coef * v;
        }
        gb += coef;
    }
    (obj, gw, gb)
}

fn lr_fit_core(xs: &[Vec<Real>], y_pm: &[Real], p: &LrParams) -> Result<(Vec<Real>, Real)> {
    if p.c <= 0.0 || p.max_epochs == 0 || p.tol <= 0.0 {
        return Err(Error::config(
            "LR params require c > 0, epochs >= 1, tol > 0",
        ));
    }
    let d = xs[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let (mut obj, mut gw, mut gb) = lr_objective_gradient(xs, y_pm, p.c, &w, b);
    let mut step = 1.0;
    for _ in 0..p.max_epochs {
        let ginf = gw
            .iter()
            .chain(std::iter::once(&gb))
            .fold(0.0f64, |m, g| m.max(g.abs()));
        if ginf <= p.tol {
            break;
        }
        let gnorm2 = gw.iter().map(|g| g * g).sum::<Real>() + gb * gb;
        // Armijo backtracking from a step that grows again after success
        step *= 2.0;
        loop {
            let wt: Vec<Real> = w.iter().zip(&gw).map(|(&wi, &gi)| wi - step * gi).collect();
            let bt = b - step * gb;
            let (ot, gwt, gbt) = lr_objective_gradient(xs, y_pm, p.c, &wt, bt);
            if ot <= obj - 0.5 * step * gnorm2 || step < 1e-18 {
                w = wt;
                b = bt;
                obj = ot;
                gw = gwt;
                gb = gbt;
                break;
            }
            step *= 0.5;
        }
    }
    Ok((w, b))
}

impl LrModel {
    fn score_row(&self, row: &[Real]) -> Real {
        let xs = self.standardizer.apply_row(row);
        let f: Real = xs
            .iter()
            .zip(&self.weights)
            .map(|(&a, &b)| a * b)
            .sum::<Real>()
            + self.intercept;
        sigmoid(f)
    }
}

pub fn train_lr(x: &[Vec<Real>], y: &[StabilityLabel], p: &LrParams) -> Result<TrainedModel> {
    check_rect(x, y)?;
    require_two_classes(y)?;
    let standardizer = Standardizer::fit(x)?;
    let xs = standardizer.apply(x);
    let y_pm: Vec<Real> = y
        .iter()
        .map(|l| if l.is_failed() { 1.0 } else { -1.0 })
        .collect();
    let (weights, intercept) = lr_fit_core(&xs, &y_pm, p)?;
    Ok(TrainedModel::Lr(LrModel {
        standardizer,
        weights,
        intercept,
        params: *p,
    }))
}

// ---------------------------------------------------------------------------
// k nearest neighbors

impl KnnModel {
    fn score_row(&self, row: &[Real]) -> Real {
        let q = self.standardizer.apply_row(row);
        let mut order: Vec<(Real, usize)> = self
            .exemplars
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d2: Real = e.iter().zip(&q).map(|(&a, &b)| (a - b) * (a - b)).sum();
                (d2, i)
            })
            .collect();
        // distance ties break toward the lower sample index
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ones = order[..self.params.k]
            .iter()
            .filter(|&&(_, i)| self.labels[i] == 1)
            .count();
        ones as Real / self.params.k as Real
    }
}

pub fn train_knn(x: &[Vec<Real>], y: &[StabilityLabel], p: &KnnParams) -> Result<TrainedModel> {
    check_rect(x, y)?;
    if p.k == 0 || p.k > x.len() {
        return Err(Error::config(format!(
            "knn k must be in 1..={}, got {}",
            x.len(),
            p.k
        )));
    }
    let standardizer = Standardizer::fit(x)?;
    let exemplars = standardizer.apply(x);
    Ok(TrainedModel::Knn(KnnModel {
        standardizer,
        exemplars,
        labels: to_y01(y),
        params: *p,
    }))
}

// ---------------------------------------------------------------------------
// decision tree

fn gini(n1: usize, n: usize) -> Real {
    let p1 = n1 as Real / n as Real;
    let p0 = 1.0 - p1;
    1.0 - p1 * p1 - p0 * p0
}

struct TreeBuilder<'a> {
    xs: &'a [Vec<Real>],
    y01: &'a [u8],
    params: &'a DtParams,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    /// Best (feature, midpoint threshold) by Gini decrease over the candidate
    /// features; ties keep the lowest feature, then the lowest threshold.
    fn best_split(&self, idx: &[usize], candidates: &[usize]) -> Option<(usize, Real, Real)> {
        let n = idx.len();
        let n1 = idx.iter().filter(|&&i| self.y01[i] == 1).count();
        let parent = gini(n1, n);
        let mut best: Option<(usize, Real, Real)> = None; // (feature, threshold, decrease)
        for &f in candidates {
            let mut sorted: Vec<usize> = idx.to_vec();
            sorted.sort_by(|&a, &b| self.xs[a][f].partial_cmp(&self.xs[b][f]).unwrap());
            let mut left1 = 0usize;
            for s in 1..n {
                left1 += (self.y01[sorted[s - 1]] == 1) as usize;
                let (lo, hi) = (self.xs[sorted[s - 1]][f], self.xs[sorted[s]][f]);
                if lo == hi {
                    continue;
                }
                if s < self.params.min_leaf || n - s < self.params.min_leaf {
                    continue;
                }
                let child = (s as Real * gini(left1, s)
                    + (n - s) as Real * gini(n1 - left1, n - s))
                    / n as Real;
                let decrease = parent - child;
                let threshold = lo + (hi - lo) / 2.0;
                let better = match best {
                    None => decrease > 1e-15,
                    Some((_, _, bd)) => decrease > bd + 1e-15,
                };
                if better {
                    best = Some((f, threshold, decrease));
                }
            }
        }
        best
    }

    fn build(
        &mut self,
        idx: &[usize],
        depth: usize,
        sampler: &mut dyn FnMut() -> Vec<usize>,
    ) -> usize {
        let n = idx.len();
        let n1 = idx.iter().filter(|&&i| self.y01[i] == 1).count();
        let p1 = n1 as Real / n as Real;
        let leaf = |nodes: &mut Vec<TreeNode>| {
            nodes.push(TreeNode::Leaf { p1 });
            nodes.len() - 1
        };
        if depth >= self.params.max_depth || n1 == 0 || n1 == n || n < 2 * self.params.min_leaf {
            return leaf(&mut self.nodes);
        }
        let candidates = sampler();
        let Some((feature, threshold, _)) = self.best_split(idx, &candidates) else {
            return leaf(&mut self.nodes);
        };
        let (li, ri): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.xs[i][feature] <= threshold);
        let left = self.build(&li, depth + 1, sampler);
        let right = self.build(&ri, depth + 1, sampler);
        self.nodes.push(TreeNode::Split {
            feature,
            threshold,
            p1,
            left,
            right,
        });
        self.nodes.len() - 1
    }
}

fn fit_tree(
    xs: &[Vec<Real>],
    y01: &[u8],
    idx: &[usize],
    params: &DtParams,
    sampler: &mut dyn FnMut() -> Vec<usize>,
) -> Tree {
    let mut b = TreeBuilder {
        xs,
        y01,
        params,
        nodes: Vec::new(),
    };
    let root = b.build(idx, 0, sampler);
    Tree {
        nodes: b.nodes,
        root,
    }
}

/// Reduced-error pruning: children-first over the arena (children always
/// precede their parent), collapse any split whose removal does not lower
/// holdout accuracy.
fn prune_tree(tree: &mut Tree, holdout_x: &[Vec<Real>], holdout_y: &[u8]) {
    if holdout_x.is_empty() {
        return;
    }
    let accuracy = |t: &Tree| {
        holdout_x
            .iter()
            .zip(holdout_y)
            .filter(|(r, &y)| ((t.score_row(r) > 0.5) as u8) == y)
            .count()
    };
    for i in 0..tree.nodes.len() {
        if let TreeNode::Split { p1, .. } = tree.nodes[i] {
            let before = accuracy(tree);
            let saved = tree.nodes[i].clone();
            tree.nodes[i] = TreeNode::Leaf { p1 };
            if accuracy(tree) < before {
                tree.nodes[i] = saved;
            }
        }
    }
}

pub fn train_dt(x: &[Vec<Real>], y: &[StabilityLabel], p: &DtParams) -> Result<TrainedModel> {
    check_rect(x, y)?;
    if p.min_leaf == 0 || p.max_depth == 0 {
        return Err(Error::config("dt needs min_leaf >= 1 and max_depth >= 1"));
    }
    if x.len() < p.min_leaf {
        return Err(Error::domain("fewer training rows than min_leaf"));
    }
    let standardizer = Standardizer::fit(x)?;
    let xs = standardizer.apply(x);
    let y01 = to_y01(y);
    let d = xs[0].len();
    let all: Vec<usize> = (0..d).collect();
    let mut sampler = || all.clone();

    let tree = if p.prune && x.len() >= 5 {
        // every fifth row is held out for pruning
        let grow: Vec<usize> = (0..xs.len()).filter(|i| i % 5 != 0).collect();
        let hold: Vec<usize> = (0..xs.len()).filter(|i| i % 5 == 0).collect();
        let mut tree = fit_tree(&xs, &y01, &grow, p, &mut sampler);
        let hx: Vec<Vec<Real>> = hold.iter().map(|&i| xs[i].clone()).collect();
        let hy: Vec<u8> = hold.iter().map(|&i| y01[i]).collect();
        prune_tree(&mut tree, &hx, &hy);
        tree
    } else {
        let idx: Vec<usize> = (0..xs.len()).collect();
        fit_tree(&xs, &y01, &idx, p, &mut sampler)
    };
    Ok(TrainedModel::Dt(DtModel {
        standardizer,
        tree,
        params: *p,
    }))
}

// ---------------------------------------------------------------------------
// support vector classifier

fn kernel_eval(kernel: &Kernel, gamma: Real, a: &[Real], b: &[Real]) -> Real {
    match kernel {
        Kernel::Linear => a.iter().zip(b).map(|(&x, &y)| x * y).sum(),
        Kernel::Rbf { .. } => {
            let d2: Real = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
            (-gamma * d2).exp()
        }
    }
}

impl SvcModel {
    fn decision_row(&self, row: &[Real]) -> Real {
        let q = self.standardizer.apply_row(row);
        self.support_vectors
            .iter()
            .zip(&self.dual_coef)
            .map(|(sv, &c)| c * kernel_eval(&self.params.kernel, self.gamma, sv, &q))
            .sum::<Real>()
            + self.bias
    }
}

/// SMO on the soft-margin dual with most-violating-pair selection.
/// Violations v_t = y_t − Σ_s α_s y_s K_ts; converged when
/// max over the up-set minus min over the down-set is ≤ tol.
pub fn train_svc(x: &[Vec<Real>], y: &[StabilityLabel], p: &SvcParams) -> Result<TrainedModel> {
    check_rect(x, y)?;
    require_two_classes(y)?;
    if p.c <= 0.0 || p.tol <= 0.0 {
        return Err(Error::config("svc needs c > 0 and tol > 0"));
    }
    let standardizer = Standardizer::fit(x)?;
    let xs = standardizer.apply(x);
    let n = xs.len();
    let d = xs[0].len();
    let y_pm: Vec<Real> = y
        .iter()
        .map(|l| if l.is_failed() { 1.0 } else { -1.0 })
        .collect();

    let gamma = match p.kernel {
        Kernel::Linear => 0.0,
        Kernel::Rbf { gamma: Some(g) } => {
            if g <= 0.0 {
                return Err(Error::config("rbf gamma must be positive"));
            }
            g
        }
        Kernel::Rbf { gamma: None } => {
            let mut var_sum = 0.0;
            for j in 0..d {
                let mean = xs.iter().map(|r| r[j]).sum::<Real>() / n as Real;
                var_sum += xs
                    .iter()
                    .map(|r| (r[j] - mean) * (r[j] - mean))
                    .sum::<Real>()
                    / n as Real;
            }
            let mean_var = var_sum / d as Real;
            if mean_var <= 0.0 {
                return Err(Error::domain("all features constant: rbf gamma undefined"));
            }
            1.0 / (d as Real * mean_var)
        }
    };

    let mut kmat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel_eval(&p.kernel, gamma, &xs[i], &xs[j]);
            kmat[i * n + j] = v;
            kmat[j * n + i] = v;
        }
    }

    let mut alpha = vec![0.0f64; n];
    let mut fcache = vec![0.0f64; n]; // F_t = Σ α_s y_s K_ts
    let mut violation = Real::INFINITY;
    let mut converged = false;
    for _ in 0..p.max_iter {
        // up-set can raise its α along +y, down-set can lower it
        let mut i_up = usize::MAX;
        let mut m_up = Real::NEG_INFINITY;
        let mut j_low = usize::MAX;
        let mut m_low = Real::INFINITY;
        for t in 0..n {
            let v = y_pm[t] - fcache[t];
            let up = (y_pm[t] > 0.0 && alpha[t] < p.c) || (y_pm[t] < 0.0 && alpha[t] > 0.0);
            let low = (y_pm[t] > 0.0 && alpha[t] > 0.0) || (y_pm[t] < 0.0 && alpha[t] < p.c);
            if up && v > m_up {
                m_up = v;
                i_up = t;
            }
            if low && v < m_low {
                m_low = v;
                j_low = t;
            }
        }
        violation = m_up - m_low;
        if violation <= p.tol {
            converged = true;
            break;
        }
        let (i, j) = (i_up, j_low);
        let eta = (kmat[i * n + i] + kmat[j * n + j] - 2.0 * kmat[i * n + j]).max(1e-12);
        let vi = y_pm[i] - fcache[i];
        let vj = y_pm[j] - fcache[j];
        // optimize α_j, then recover α_i from the equality constraint
        let mut aj = alpha[j] + y_pm[j] * (vj - vi) / eta;
        let (lo, hi) = if y_pm[i] != y_pm[j] {
            (
                (alpha[j] - alpha[i]).max(0.0),
                (p.c + alpha[j] - alpha[i]).min(p.c),
            )
        } else {
            (
                (alpha[i] + alpha[j] - p.c).max(0.0),
                (alpha[i] + alpha[j]).min(p.c),
            )
        };
        aj = aj.clamp(lo, hi);
        let ai = alpha[i] + y_pm[i] * y_pm[j] * (alpha[j] - aj);
        // snap to the box so rounding residue cannot keep a bound variable
        // in the selectable sets with a zero-length feasible step
        let snap = |a: Real| {
            if a < 1e-12 * p.c {
                0.0
            } else if a > (1.0 - 1e-12) * p.c {
                p.c
            } else {
                a
            }
        };
        let (ai, aj) = (snap(ai), snap(aj));
        let di = (ai - alpha[i]) * y_pm[i];
        let dj = (aj - alpha[j]) * y_pm[j];
        alpha[i] = ai;
        alpha[j] = aj;
        for t in 0..n {
            fcache[t] += di * kmat[i * n + t] + dj * kmat[j * n + t];
        }
    }
    if !converged {
        return Err(Error::numeric(format!(
            "SMO did not converge in {} iterations: KKT violation {violation:.3e} > tol {:.3e}",
            p.max_iter, p.tol
        )));
    }

    // bias from free support vectors, else the midpoint of the violation gap
    let free: Vec<usize> = (0..n)
        .filter(|&t| alpha[t] > 1e-12 && alpha[t] < p.c - 1e-12)
        .collect();
    let bias = if free.is_empty() {
        let mut m_up = Real::NEG_INFINITY;
        let mut m_low = Real::INFINITY;
        for t in 0..n {
            let v = y_pm[t] - fcache[t];
            let up = (y_pm[t] > 0.0 && alpha[t] < p.c) || (y_pm[t] < 0.0 && alpha[t] > 0.0);
            let low = (y_pm[t] > 0.0 && alpha[t] > 0.0) || (y_pm[t] < 0.0 && alpha[t] < p.c);
            if up {
                m_up = m_up.max(v);
            }
            if low {
                m_low = m_low.min(v);
            }
        }
        (m_up + m_low) / 2.0
    } else {
        free.iter().map(|&t| y_pm[t] - fcache[t]).sum::<Real>() / free.len() as Real
    };

    let mut support_vectors = Vec::new();
    let mut dual_coef = Vec::new();
    for t in 0..n {
        if alpha[t] > 1e-12 {
            support_vectors.push(xs[t].clone());
            dual_coef.push(alpha[t] * y_pm[t]);
        }
    }
    Ok(TrainedModel::Svc(SvcModel {
        standardizer,
        support_vectors,
        dual_coef,
        bias,
        gamma,
        params: *p,
        final_violation: violation,
    }))
}

// ---------------------------------------------------------------------------
// random forest

/// Size-n sample with replacement.
pub fn bootstrap_indices<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

fn subset_size(subset: FeatureSubset, d: usize) -> usize {
    match subset {
        FeatureSubset::All => d,
        FeatureSubset::Sqrt => ((d as Real).sqrt().round() as usize).clamp(1, d),
        FeatureSubset::Count(c) => c.clamp(1, d),
    }
}

impl RfModel {
    fn score_row(&self, row: &[Real]) -> Real {
        let xs = self.standardizer.apply_row(row);
        let votes = self.trees.iter().filter(|t| t.score_row(&xs) > 0.5).count();
        votes as Real / self.trees.len() as Real
    }
}

pub fn train_rf(
    x: &[Vec<Real>],
    y: &[StabilityLabel],
    p: &RfParams,
    seed: u64,
) -> Result<TrainedModel> {
    check_rect(x, y)?;
    if p.n_trees == 0 {
        return Err(Error::config("rf needs n_trees >= 1"));
    }
    let standardizer = Standardizer::fit(x)?;
    let xs = standardizer.apply(x);
    let y01 = to_y01(y);
    let d = xs[0].len();
    let m = subset_size(p.subset, d);
    let trees: Vec<Tree> = (0..p.n_trees)
        .map(|t| {
            let mut rng = substream(seed, 0x8F, t as u64);
            let idx = if p.bootstrap {
                bootstrap_indices(xs.len(), &mut rng)
            } else {
                (0..xs.len()).collect()
            };
            let mut sampler = || {
                if m == d {
                    (0..d).collect::<Vec<usize>>()
                } else {
                    // partial Fisher-Yates draw of m distinct features
                    let mut pool: Vec<usize> = (0..d).collect();
                    for i in 0..m {
                        let j = rng.gen_range(i..d);
                        pool.swap(i, j);
                    }
                    let mut take = pool[..m].to_vec();
                    take.sort_unstable();
                    take
                }
            };
            fit_tree(&xs, &y01, &idx, &p.tree, &mut sampler)
        })
        .collect();
    Ok(TrainedModel::Rf(RfModel {
        standardizer,
        trees,
        params: *p,
    }))
}

// ---------------------------------------------------------------------------
// gaussian naive bayes

impl GnbModel {
    fn posterior_row(&self, row: &[Real]) -> Real {
        let xs = self.standardizer.apply_row(row);
        let mut log_post = [0.0f64; 2];
        for (cls, post) in log_post.iter_mut().enumerate() {
            let mut lp = self.log_priors[cls];
            for ((&v, &m), &var) in xs.iter().zip(&self.means[cls]).zip(&self.variances[cls]) {
                lp += -0.5 * (2.0 * std::f64::consts::PI * var).ln()
                    - (v - m) * (v - m) / (2.0 * var);
            }
            *post = lp;
        }
        let mx = log_post[0].max(log_post[1]);
        let e0 = (log_post[0] - mx).exp();
        let e1 = (log_post[1] - mx).exp();
        e1 / (e0 + e1)
    }
}

pub fn train_gnb(x: &[Vec<Real>], y: &[StabilityLabel], p: &GnbParams) -> Result<TrainedModel> {
    check_rect(x, y)?;
    require_two_classes(y)?;
    if p.variance_floor_ratio <= 0.0 {
        return Err(Error::config("variance floor ratio must be positive"));
    }
    let standardizer = Standardizer::fit(x)?;
    let xs = standardizer.apply(x);
    let y01 = to_y01(y);
    let d = xs[0].len();

    let mut means = [vec![0.0; d], vec![0.0; d]];
    let mut variances = [vec![0.0; d], vec![0.0; d]];
    let mut counts = [0usize; 2];
    for (row, &c) in xs.iter().zip(&y01) {
        counts[c as usize] += 1;
        for (m, &v) in means[c as usize].iter_mut().zip(row) {
            *m += v;
        }
    }
    for cls in 0..2 {
        for m in &mut means[cls] {
            *m /= counts[cls] as Real;
        }
    }
    for (row, &c) in xs.iter().zip(&y01) {
        let cls = c as usize;
        for ((var, &v), &m) in variances[cls].iter_mut().zip(row).zip(&means[cls]) {
            *var += (v - m) * (v - m);
        }
    }
    let mut var_total = 0.0;
    for cls in 0..2 {
        for var in &mut variances[cls] {
            *var /= counts[cls] as Real;
            var_total += *var;
        }
    }
    let floor = p.variance_floor_ratio * (var_total / (2 * d) as Real).max(Real::MIN_POSITIVE);
    for class_vars in &mut variances {
        for var in class_vars {
            *var = var.max(floor);
        }
    }
    let n = xs.len() as Real;
    let log_priors = [(counts[0] as Real / n).ln(), (counts[1] as Real / n).ln()];
    Ok(TrainedModel::Gnb(GnbModel {
        standardizer,
        log_priors,
        means,
        variances,
        params: *p,
    }))
}

// ---------------------------------------------------------------------------
// ensembles

/// Trains the six base kinds on the given rows, in the fixed order
/// LR, KNN, DT, SVC, RF, GNB.
pub fn train_bases(
    x: &[Vec<Real>],
    y: &[StabilityLabel],
    p: &BaseParams,
    seed: u64,
) -> Result<Vec<TrainedModel>> {
    Ok(vec![
        train_lr(x, y, &p.lr)?,
        train_knn(x, y, &p.knn)?,
        train_dt(x, y, &p.dt)?,
        train_svc(x, y, &p.svc)?,
        train_rf(x, y, &p.rf, seed)?,
        train_gnb(x, y, &p.gnb)?,
    ])
}

/// Out-of-fold base-model scores: row i is scored by models trained on
/// `train_x` rows of the fold that holds i out. Training and scoring rows are
/// separate arguments so leakage is checkable: perturbing `train_x[i]` must
/// leave meta row i bit-identical.
pub fn stacking_meta_features(
    train_x: &[Vec<Real>],
    y: &[StabilityLabel],
    score_x: &[Vec<Real>],
    folds: &[FoldSplit],
    p: &BaseParams,
    seed: u64,
) -> Result<Vec<Vec<Real>>> {
    if train_x.len() != score_x.len() {
        return Err(Error::domain("train and score row counts differ"));
    }
    let mut meta = vec![vec![0.0; 6]; train_x.len()];
    for fold in folds {
        let fx: Vec<Vec<Real>> = fold.train.iter().map(|&i| train_x[i].clone()).collect();
        let fy: Vec<StabilityLabel> = fold.train.iter().map(|&i| y[i]).collect();
        let bases = train_bases(&fx, &fy, p, substream(seed, 0x57AC, fold.fold as u64).gen())?;
        let rows: Vec<Vec<Real>> = fold.test.iter().map(|&i| score_x[i].clone()).collect();
        for (b, base) in bases.iter().enumerate() {
            let scores = base.prob_score(&rows)?;
            for (&i, s) in fold.test.iter().zip(scores) {
                meta[i][b] = s;
            }
        }
    }
    Ok(meta)
}

fn meta_lr_cv_accuracy(
    meta_x: &[Vec<Real>],
    y: &[StabilityLabel],
    c: Real,
    folds: &[FoldSplit],
) -> Result<Real> {
    let mut correct = 0usize;
    for fold in folds {
        let fx: Vec<Vec<Real>> = fold.train.iter().map(|&i| meta_x[i].clone()).collect();
        let fy: Vec<StabilityLabel> = fold.train.iter().map(|&i| y[i]).collect();
        let model = train_lr(
            &fx,
            &fy,
            &LrParams {
                c,
                ..LrParams::default()
            },
        )?;
        let rows: Vec<Vec<Real>> = fold.test.iter().map(|&i| meta_x[i].clone()).collect();
        let pred = model.predict(&rows)?;
        correct += fold
            .test
            .iter()
            .zip(&pred)
            .filter(|(&i, &p)| y[i] == p)
            .count();
    }
    Ok(correct as Real / meta_x.len() as Real)
}

pub fn train_stacking(
    x: &[Vec<Real>],
    y: &[StabilityLabel],
    p: &StackParams,
    seed: u64,
) -> Result<TrainedModel> {
    check_rect(x, y)?;
    require_two_classes(y)?;
    if p.folds < 2 || p.meta_folds < 2 || p.meta_c_grid.is_empty() {
        return Err(Error::config(
            "stacking needs folds >= 2, meta_folds >= 2, non-empty C grid",
        ));
    }
    let n_pos = y.iter().filter(|l| l.is_failed()).count();
    let min_class = n_pos.min(y.len() - n_pos);
    if p.folds > min_class {
        return Err(Error::config(format!(
            "fold count {} exceeds the smaller class count {min_class}",
            p.folds
        )));
    }
    let folds = repeated_kfold(x.len(), p.folds, 1, substream(seed, 0x0F, 0).gen())?;
    let meta_x = stacking_meta_features(x, y, x, &folds, &p.base, seed)?;

    let meta_folds = repeated_kfold(x.len(), p.meta_folds, 1, substream(seed, 0x0F, 1).gen())?;
    let mut best: Option<(Real, Real)> = None; // (c, accuracy)
    for &c in &p.meta_c_grid {
        let acc = meta_lr_cv_accuracy(&meta_x, y, c, &meta_folds)?;
        // ties keep the smaller penalty, i.e. the earlier grid entry
        if best.map(|(_, ba)| acc > ba).unwrap_or(true) {
            best = Some((c, acc));
        }
    }
    let (meta_c, _) = best.unwrap();
    let meta = match train_lr(
        &meta_x,
        y,
        &LrParams {
            c: meta_c,
            ..LrParams::default()
        },
    )? {
        TrainedModel::Lr(m) => m,
        _ => unreachable!(),
    };
    let bases = train_bases(x, y, &p.base, substream(seed, 0x57AC, u64::MAX).gen())?;
    Ok(TrainedModel::Stack(Box::new(StackModel {
        bases,
        meta,
        meta_c,
        params: p.clone(),
    })))
}

pub fn train_bagging(
    x: &[Vec<Real>],
    y: &[StabilityLabel],
    p: &BagParams,
    seed: u64,
) -> Result<TrainedModel> {
    check_rect(x, y)?;
    if p.n_estimators == 0 {
        return Err(Error::config("bagging needs n_estimators >= 1"));
    }
    let mut estimators = Vec::with_capacity(p.n_estimators);
    for e in 0..p.n_estimators {
        let mut rng = substream(seed, 0xBA6, e as u64);
        let idx: Vec<usize> = if p.bootstrap {
            bootstrap_indices(x.len(), &mut rng)
        } else {
            (0..x.len()).collect()
        };
        let bx: Vec<Vec<Real>> = idx.iter().map(|&i| x[i].clone()).collect();
        let by: Vec<StabilityLabel> = idx.iter().map(|&i| y[i]).collect();
        match train_rf(&bx, &by, &p.rf, rng.gen())? {
            TrainedModel::Rf(m) => estimators.push(m),
            _ => unreachable!(),
        }
    }
    Ok(TrainedModel::Bag(BagModel {
        estimators,
        params: p.clone(),
    }))
}

pub fn train_voting(
    x: &[Vec<Real>],
    y: &[StabilityLabel],
    p: &VoteParams,
    seed: u64,
) -> Result<TrainedModel> {
    check_rect(x, y)?;
    let bases = train_bases(x, y, &p.base, seed)?;
    Ok(TrainedModel::Vote(Box::new(VoteModel {
        bases,
        params: p.clone(),
    })))
}

// ---------------------------------------------------------------------------
// persistence

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u32,
    model: TrainedModel,
}

const MODEL_FORMAT: &str = "rfmc-model";
const MODEL_VERSION: u32 = 1;

/// Saves a model as a versioned JSON document. serde_json round-trips f64
/// exactly, so reloaded models predict bit-identically.
pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    let doc = ModelDocument {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        model: model.clone(),
    };
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, &doc)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let doc: ModelDocument = serde_json::from_reader(f)?;
    if doc.format != MODEL_FORMAT {
        return Err(Error::data(format!(
            "unknown model format {:?}",
            doc.format
        )));
    }
    if doc.version != MODEL_VERSION {
        return Err(Error::data(format!(
            "unsupported model version {}, expected {MODEL_VERSION}",
            doc.version
        )));
    }
    Ok(doc.model)
}
