//! The consistency-regularized training loop over a linear embedder.
//!
//! The loss is the usual identity-classification stack — cross-entropy plus
//! a hinge triplet loss — extended with a consistency term that penalizes
//! the squared gap between table-based distances and the exact per-sub-space
//! distances of the current batch. Table entries are constants during
//! differentiation (hard assignments and rounding are non-differentiable);
//! centroid improvement comes from re-running k-means every
//! `refresh_period` epochs, warm-started from the previous centroids.
//!
//! Everything here is f64 and sequential, so a run is bit-reproducible for
//! a given seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::binio::{self, CountingReader};
use crate::distance::{build_lut, quantize_lut, LutTable};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::quantizer::{
    encode_raw, quantization_error_raw, train_codebook_raw, CodeMatrix, Codebook,
};

const PRM_MAGIC: &[u8; 4] = b"SCRP";
const PRM_VERSION: u32 = 1;

/// Trainable parameters: a linear projection standing in for the backbone,
/// and the identity classifier on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    d_in: usize,
    d_out: usize,
    num_classes: usize,
    /// `d_in x d_out`, row-major.
    projection: Vec<f64>,
    /// `num_classes x d_out`, row-major.
    classifier: Vec<f64>,
}

impl EmbedderParams {
    pub fn new(
        d_in: usize,
        d_out: usize,
        num_classes: usize,
        projection: Vec<f64>,
        classifier: Vec<f64>,
    ) -> Result<Self> {
        if projection.len() != d_in * d_out {
            return Err(Error::Config(format!(
                "projection has {} values, expected {d_in} x {d_out}",
                projection.len()
            )));
        }
        if classifier.len() != num_classes * d_out {
            return Err(Error::Config(format!(
                "classifier has {} values, expected {num_classes} x {d_out}",
                classifier.len()
            )));
        }
        if projection.iter().chain(&classifier).any(|v| !v.is_finite()) {
            return Err(Error::Corruption("non-finite parameter value".into()));
        }
        Ok(EmbedderParams {
            d_in,
            d_out,
            num_classes,
            projection,
            classifier,
        })
    }

    pub fn random(d_in: usize, d_out: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let proj_scale = 1.0 / (d_in as f64).sqrt();
        let cls_scale = 1.0 / (d_out as f64).sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let projection = (0..d_in * d_out)
            .map(|_| normal.sample(rng) * proj_scale)
            .collect();
        let classifier = (0..num_classes * d_out)
            .map(|_| normal.sample(rng) * cls_scale)
            .collect();
        EmbedderParams {
            d_in,
            d_out,
            num_classes,
            projection,
            classifier,
        }
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn classifier(&self) -> &[f64] {
        &self.classifier
    }

    /// Project `n` rows of `d_in` features into `n` rows of `d_out`.
    pub fn embed(&self, features: &[f64], n: usize) -> Vec<f64> {
        debug_assert_eq!(features.len(), n * self.d_in);
        let mut out = vec![0.0; n * self.d_out];
        for i in 0..n {
            let row = &features[i * self.d_in..(i + 1) * self.d_in];
            let e = &mut out[i * self.d_out..(i + 1) * self.d_out];
            for (d, &x) in row.iter().enumerate() {
                let w = &self.projection[d * self.d_out..(d + 1) * self.d_out];
                for (ek, &wk) in e.iter_mut().zip(w) {
                    *ek += x * wk;
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        binio::write_magic(&mut w, PRM_MAGIC)?;
        binio::write_u32(&mut w, PRM_VERSION)?;
        binio::write_u32(&mut w, self.d_in as u32)?;
        binio::write_u32(&mut w, self.d_out as u32)?;
        binio::write_u32(&mut w, self.num_classes as u32)?;
        for &v in self.projection.iter().chain(&self.classifier) {
            binio::write_f64(&mut w, v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = CountingReader::new(BufReader::new(File::open(path)?));
        r.read_magic(PRM_MAGIC)?;
        r.read_version(PRM_VERSION)?;
        let d_in = r.read_u32("input dimension")? as usize;
        let d_out = r.read_u32("output dimension")? as usize;
        let num_classes = r.read_u32("class count")? as usize;
        let mut projection = vec![0.0f64; d_in * d_out];
        for v in projection.iter_mut() {
            *v = r.read_f64("projection")?;
        }
        let mut classifier = vec![0.0f64; num_classes * d_out];
        for v in classifier.iter_mut() {
            *v = r.read_f64("classifier")?;
        }
        EmbedderParams::new(d_in, d_out, num_classes, projection, classifier)
    }
}

/// Step-decay learning-rate schedule with a linear warm-up.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    /// Linear ramp from `initial / 10` at epoch 1 to `initial` at this epoch.
    pub warmup_epochs: usize,
    /// Rate is multiplied by 0.1 after this epoch.
    pub decay1_epoch: usize,
    /// Rate is multiplied by 0.01 (of the initial) after this epoch.
    pub decay2_epoch: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 3.5e-4,
            warmup_epochs: 10,
            decay1_epoch: 40,
            decay2_epoch: 70,
        }
    }
}

impl LrSchedule {
    /// The rate used for a 1-based epoch index.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let base = if epoch > self.decay2_epoch {
            self.initial * 0.01
        } else if epoch > self.decay1_epoch {
            self.initial * 0.1
        } else {
            self.initial
        };
        if self.warmup_epochs > 1 && epoch <= self.warmup_epochs {
            let t = (epoch - 1) as f64 / (self.warmup_epochs - 1) as f64;
            base * (0.1 + 0.9 * t)
        } else {
            base
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub margin: f64,
    /// Weight of the consistency term.
    pub alpha: f64,
    /// Codebook refresh period in epochs (the iteration frequency).
    pub refresh_period: usize,
    pub num_subspaces: usize,
    pub num_centroids: usize,
    /// Regularize against the integer table instead of the real one.
    pub int_mode: bool,
    /// Embedding dimension; defaults to the input dimension.
    pub embed_dim: Option<usize>,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 64,
            schedule: LrSchedule::default(),
            margin: 0.3,
            alpha: 0.01,
            refresh_period: 10,
            num_subspaces: 4,
            num_centroids: 256,
            int_mode: false,
            embed_dim: None,
            kmeans_iters: 25,
            kmeans_tol: 1e-4,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if self.refresh_period == 0 {
            return Err(Error::validation("refresh_period", "must be at least 1"));
        }
        if self.alpha < 0.0 {
            return Err(Error::validation("alpha", "must be >= 0"));
        }
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::validation("margin", "must be > 0"));
        }
        if self.batch_size < 4 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::validation("batch_size", "must be an even number >= 4"));
        }
        Ok(())
    }
}

/// Per-batch loss components; `total = ce + triplet + alpha * consistency`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub triplet: f64,
    pub consistency: f64,
    pub total: f64,
}

/// Mean softmax negative log-likelihood over a batch, with analytic
/// gradients for the embeddings and the classifier.
pub fn cross_entropy_loss(
    embeddings: &[f64],
    n: usize,
    dim: usize,
    labels: &[usize],
    classifier: &[f64],
    num_classes: usize,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if n == 0 || embeddings.len() != n * dim {
        return Err(Error::Argument("empty or misshapen embedding batch".into()));
    }
    if labels.len() != n {
        return Err(Error::Argument(format!(
            "{} labels for {n} embeddings",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Argument(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    if classifier.len() != num_classes * dim {
        return Err(Error::Argument("classifier shape mismatch".into()));
    }

    let mut loss = 0.0;
    let mut grad_emb = vec![0.0; n * dim];
    let mut grad_cls = vec![0.0; num_classes * dim];
    let mut probs = vec![0.0; num_classes];
    for i in 0..n {
        let e = &embeddings[i * dim..(i + 1) * dim];
        let mut max_logit = f64::NEG_INFINITY;
        for y in 0..num_classes {
            let w = &classifier[y * dim..(y + 1) * dim];
            let logit: f64 = e.iter().zip(w).map(|(&a, &b)| a * b).sum();
            probs[y] = logit;
            max_logit = max_logit.max(logit);
        }
        let mut z = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max_logit).exp();
            z += *p;
        }
        for p in probs.iter_mut() {
            *p /= z;
        }
        loss -= probs[labels[i]].max(f64::MIN_POSITIVE).ln();

        for y in 0..num_classes {
            let dlogit = (probs[y] - if y == labels[i] { 1.0 } else { 0.0 }) / n as f64;
            let w = &classifier[y * dim..(y + 1) * dim];
            let ge = &mut grad_emb[i * dim..(i + 1) * dim];
            for (g, &wv) in ge.iter_mut().zip(w) {
                *g += dlogit * wv;
            }
            let gc = &mut grad_cls[y * dim..(y + 1) * dim];
            for (g, &ev) in gc.iter_mut().zip(e) {
                *g += dlogit * ev;
            }
        }
    }
    Ok((loss / n as f64, grad_emb, grad_cls))
}

/// Gradients of one triplet, in anchor/positive/negative order.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrads {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Hinge triplet loss `max(0, margin + ||a-p|| - ||a-n||)` on unsquared
/// Euclidean norms, with a zero subgradient at the hinge corner.
pub fn triplet_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<(f64, TripletGrads)> {
    let dim = anchor.len();
    if dim == 0 {
        return Err(Error::Argument("zero-length vectors".into()));
    }
    if positive.len() != dim || negative.len() != dim {
        return Err(Error::Argument("triplet dimension mismatch".into()));
    }
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::Argument(format!("margin must be > 0, got {margin}")));
    }

    let norm = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    };
    let d_pos = norm(anchor, positive);
    let d_neg = norm(anchor, negative);
    let z = margin + d_pos - d_neg;

    let mut grads = TripletGrads {
        anchor: vec![0.0; dim],
        positive: vec![0.0; dim],
        negative: vec![0.0; dim],
    };
    if z <= 0.0 {
        return Ok((0.0, grads));
    }
    // d||a-p||/da = (a-p)/||a-p||; zero-norm branches get subgradient 0
    if d_pos > 0.0 {
        for d in 0..dim {
            let u = (anchor[d] - positive[d]) / d_pos;
            grads.anchor[d] += u;
            grads.positive[d] -= u;
        }
    }
    if d_neg > 0.0 {
        for d in 0..dim {
            let v = (anchor[d] - negative[d]) / d_neg;
            grads.anchor[d] -= v;
            grads.negative[d] += v;
        }
    }
    Ok((z, grads))
}

fn lut_entry_descaled(table: LutTable<'_>, m: usize, a: usize, b: usize) -> f64 {
    match table {
        LutTable::Real(lut) => lut.entry(m, a, b),
        // integer entries share units with real distances after descaling
        LutTable::Int(lut) => lut.entry(m, a, b) as f64 / lut.scale(),
    }
}

/// Mean squared gap between table distances and exact per-sub-space batch
/// distances: `(1/n^2) sum_{i,j} sum_m (LUT[m][c_i][c_j] - V_R[m][i][j])^2`.
///
/// Table entries are constants; the gradient flows only through the exact
/// distances. Integer tables are descaled by `1/scale` first.
pub fn consistency_loss(
    embeddings: &[f64],
    n: usize,
    dim: usize,
    codes: &CodeMatrix,
    table: LutTable<'_>,
    num_subspaces: usize,
) -> Result<(f64, Vec<f64>)> {
    if n < 2 {
        return Err(Error::Contract("consistency loss needs a batch of at least 2".into()));
    }
    if embeddings.len() != n * dim {
        return Err(Error::Contract("embedding batch shape mismatch".into()));
    }
    if codes.len() != n || codes.num_subspaces() != num_subspaces {
        return Err(Error::Contract(format!(
            "codes ({} rows, M={}) misaligned with batch ({n} rows, M={num_subspaces})",
            codes.len(),
            codes.num_subspaces()
        )));
    }
    if num_subspaces == 0 || !dim.is_multiple_of(num_subspaces) {
        return Err(Error::Contract(format!(
            "sub-space count {num_subspaces} does not divide embedding dimension {dim}"
        )));
    }
    let sub_dim = dim / num_subspaces;
    let inv_n2 = 1.0 / (n * n) as f64;

    let mut loss = 0.0;
    let mut grad = vec![0.0; n * dim];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue; // self pair: both sides are zero
            }
            for m in 0..num_subspaces {
                let off = m * sub_dim;
                let ei = &embeddings[i * dim + off..i * dim + off + sub_dim];
                let ej = &embeddings[j * dim + off..j * dim + off + sub_dim];
                let vr: f64 = ei.iter().zip(ej).map(|(&a, &b)| (a - b) * (a - b)).sum();
                let a = lut_entry_descaled(
                    table,
                    m,
                    codes.code(i)[m] as usize,
                    codes.code(j)[m] as usize,
                );
                let diff = a - vr;
                loss += diff * diff;
                let coef = -4.0 * inv_n2 * diff;
                for d in 0..sub_dim {
                    let delta = coef * (ei[d] - ej[d]);
                    grad[i * dim + off + d] += delta;
                    grad[j * dim + off + d] -= delta;
                }
            }
        }
    }
    Ok((loss * inv_n2, grad))
}

/// One training batch: raw features, class labels, and the sampled
/// anchor/positive/negative index triples.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    /// `n x d_in`, row-major.
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub triplets: Vec<(usize, usize, usize)>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Gradients of the combined loss with respect to the embedder parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub projection: Vec<f64>,
    pub classifier: Vec<f64>,
}

/// Combined loss over one batch: CE + mean triplet + alpha * consistency.
pub fn total_loss(
    batch: &TrainBatch,
    params: &EmbedderParams,
    codebook: &Codebook,
    table: LutTable<'_>,
    config: &TrainConfig,
) -> Result<(LossBreakdown, ParamGrads)> {
    config.validate()?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let d_in = params.d_in;
    let d_out = params.d_out;
    if batch.features.len() != n * d_in {
        return Err(Error::Contract("batch feature shape mismatch".into()));
    }

    let embeddings = params.embed(&batch.features, n);

    let (ce, mut grad_emb, grad_cls) = cross_entropy_loss(
        &embeddings,
        n,
        d_out,
        &batch.labels,
        &params.classifier,
        params.num_classes,
    )?;

    let mut triplet_sum = 0.0;
    for &(a, p, ng) in &batch.triplets {
        let (loss, grads) = triplet_loss(
            &embeddings[a * d_out..(a + 1) * d_out],
            &embeddings[p * d_out..(p + 1) * d_out],
            &embeddings[ng * d_out..(ng + 1) * d_out],
            config.margin,
        )?;
        triplet_sum += loss;
        let scale = 1.0 / batch.triplets.len() as f64;
        for d in 0..d_out {
            grad_emb[a * d_out + d] += scale * grads.anchor[d];
            grad_emb[p * d_out + d] += scale * grads.positive[d];
            grad_emb[ng * d_out + d] += scale * grads.negative[d];
        }
    }
    let triplet = if batch.triplets.is_empty() {
        0.0
    } else {
        triplet_sum / batch.triplets.len() as f64
    };

    // codes for the current batch under the current codebook
    let emb_f32: Vec<f32> = embeddings.iter().map(|&v| v as f32).collect();
    let codes = encode_raw(&emb_f32, n, d_out, codebook)?;
    let (consistency, grad_cons) = consistency_loss(
        &embeddings,
        n,
        d_out,
        &codes,
        table,
        config.num_subspaces,
    )?;
    if config.alpha != 0.0 {
        for (g, gc) in grad_emb.iter_mut().zip(&grad_cons) {
            *g += config.alpha * gc;
        }
    }

    // back through the projection: dL/dP = X^T dL/dE
    let mut grad_proj = vec![0.0; d_in * d_out];
    for i in 0..n {
        let x = &batch.features[i * d_in..(i + 1) * d_in];
        let ge = &grad_emb[i * d_out..(i + 1) * d_out];
        for (d, &xv) in x.iter().enumerate() {
            let gp = &mut grad_proj[d * d_out..(d + 1) * d_out];
            for (g, &gev) in gp.iter_mut().zip(ge) {
                *g += xv * gev;
            }
        }
    }

    let breakdown = LossBreakdown {
        ce,
        triplet,
        consistency,
        total: ce + triplet + config.alpha * consistency,
    };
    Ok((
        breakdown,
        ParamGrads {
            projection: grad_proj,
            classifier: grad_cls,
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub triplet: f64,
    pub consistency: f64,
    pub total: f64,
    pub quant_error: f64,
}

/// One codebook refresh: assignment error of the old centroids on the
/// current embeddings versus the error after the warm-started re-fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshEvent {
    pub epoch: usize,
    pub error_before: f64,
    pub error_after: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub refreshes: Vec<RefreshEvent>,
}

impl TrainingLog {
    /// CSV with a header row and one row per epoch.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "epoch,lr,ce,triplet,consistency,total,quant_error")?;
        for r in &self.epochs {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch, r.lr, r.ce, r.triplet, r.consistency, r.total, r.quant_error
            )?;
        }
        Ok(())
    }
}

/// Pick `P` identities x `K` instances with `P * K == batch_size`.
///
/// Prefers K = 4; falls back to larger K when there are fewer identities
/// than `batch_size / 4`.
fn choose_pk(batch_size: usize, num_identities: usize) -> Result<(usize, usize)> {
    let k = if batch_size.is_multiple_of(4) { 4 } else { 2 };
    let mut p = batch_size / k;
    if p > num_identities {
        p = (2..=num_identities)
            .rev()
            .find(|&p| batch_size.is_multiple_of(p) && batch_size / p >= 2)
            .ok_or_else(|| {
                Error::Config(format!(
                    "cannot factor batch size {batch_size} into P x K with P <= {num_identities}"
                ))
            })?;
    }
    if p < 2 {
        return Err(Error::Config(
            "batch must cover at least two identities for triplet sampling".into(),
        ));
    }
    Ok((p, batch_size / p))
}

/// Run the full training loop; deterministic for a given config.
pub fn run_training(
    features: &FeatureSet,
    config: &TrainConfig,
) -> Result<(EmbedderParams, Codebook, TrainingLog)> {
    config.validate()?;
    let n = features.len();
    let d_in = features.dim();
    let d_out = config.embed_dim.unwrap_or(d_in);
    if d_out == 0 || !d_out.is_multiple_of(config.num_subspaces) {
        return Err(Error::Config(format!(
            "embedding dimension {d_out} not divisible by M={}",
            config.num_subspaces
        )));
    }

    let by_id = features.rows_by_identity();
    let singletons: Vec<u32> = by_id
        .iter()
        .filter(|(_, rows)| rows.len() < 2)
        .map(|(&id, _)| id)
        .collect();
    if !singletons.is_empty() {
        return Err(Error::Protocol(format!(
            "triplet sampling needs >= 2 instances per identity; offending ids: {singletons:?}"
        )));
    }
    if by_id.len() < 2 {
        return Err(Error::Protocol(
            "triplet sampling needs at least two identities".into(),
        ));
    }
    let classes: Vec<Vec<usize>> = by_id.into_values().collect();
    let num_classes = classes.len();
    let (p_ids, k_inst) = choose_pk(config.batch_size, num_classes)?;

    let features_f64: Vec<f64> = features.vectors().iter().map(|&v| v as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut params = EmbedderParams::random(d_in, d_out, num_classes, &mut rng);

    // initial codebook over the initial embeddings
    let all_embeddings = params.embed(&features_f64, n);
    let emb_f32: Vec<f32> = all_embeddings.iter().map(|&v| v as f32).collect();
    let (mut codebook, _) = train_codebook_raw(
        &emb_f32,
        n,
        d_out,
        config.num_subspaces,
        config.num_centroids,
        config.kmeans_iters,
        config.kmeans_tol,
        None,
        rng.random(),
    )?;
    let mut lut = build_lut(&codebook);
    let mut int_lut = config.int_mode.then(|| quantize_lut(&lut)).transpose()?;

    let steps_per_epoch = (n / config.batch_size).max(1);
    let mut log = TrainingLog::default();
    let mut class_order: Vec<usize> = (0..num_classes).collect();

    for epoch in 1..=config.epochs {
        let lr = config.schedule.learning_rate(epoch);
        let mut sums = LossBreakdown {
            ce: 0.0,
            triplet: 0.0,
            consistency: 0.0,
            total: 0.0,
        };
        for _ in 0..steps_per_epoch {
            let batch = sample_batch(
                features,
                &features_f64,
                &classes,
                p_ids,
                k_inst,
                &mut class_order,
                &mut rng,
            );
            let table = match &int_lut {
                Some(il) => LutTable::Int(il),
                None => LutTable::Real(&lut),
            };
            let (breakdown, grads) = total_loss(&batch, &params, &codebook, table, config)?;
            for (w, g) in params.projection.iter_mut().zip(&grads.projection) {
                *w -= lr * g;
            }
            for (w, g) in params.classifier.iter_mut().zip(&grads.classifier) {
                *w -= lr * g;
            }
            sums.ce += breakdown.ce;
            sums.triplet += breakdown.triplet;
            sums.consistency += breakdown.consistency;
            sums.total += breakdown.total;
        }

        let all_embeddings = params.embed(&features_f64, n);
        let emb_f32: Vec<f32> = all_embeddings.iter().map(|&v| v as f32).collect();
        let quant_error = quantization_error_raw(&emb_f32, n, d_out, &codebook)?;
        let steps = steps_per_epoch as f64;
        log.epochs.push(EpochRecord {
            epoch,
            lr,
            ce: sums.ce / steps,
            triplet: sums.triplet / steps,
            consistency: sums.consistency / steps,
            total: sums.total / steps,
            quant_error,
        });

        if epoch % config.refresh_period == 0 {
            let (refreshed, report) = train_codebook_raw(
                &emb_f32,
                n,
                d_out,
                config.num_subspaces,
                codebook.num_centroids(),
                config.kmeans_iters,
                config.kmeans_tol,
                Some(&codebook),
                rng.random(),
            )?;
            log.refreshes.push(RefreshEvent {
                epoch,
                error_before: quant_error,
                error_after: report.total_quantization_error,
            });
            codebook = refreshed;
            lut = build_lut(&codebook);
            int_lut = config.int_mode.then(|| quantize_lut(&lut)).transpose()?;
        }
    }

    Ok((params, codebook, log))
}

fn sample_batch(
    features: &FeatureSet,
    features_f64: &[f64],
    classes: &[Vec<usize>],
    p_ids: usize,
    k_inst: usize,
    class_order: &mut [usize],
    rng: &mut ChaCha8Rng,
) -> TrainBatch {
    let d_in = features.dim();
    class_order.shuffle(rng);

    let mut rows = Vec::with_capacity(p_ids * k_inst);
    let mut labels = Vec::with_capacity(p_ids * k_inst);
    for &class in class_order.iter().take(p_ids) {
        let mut pool = classes[class].clone();
        pool.shuffle(rng);
        for j in 0..k_inst {
            // with replacement once an identity's instances are exhausted
            let row = if j < pool.len() {
                pool[j]
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            rows.push(row);
            labels.push(class);
        }
    }

    let mut batch_features = Vec::with_capacity(rows.len() * d_in);
    for &row in &rows {
        batch_features.extend_from_slice(&features_f64[row * d_in..(row + 1) * d_in]);
    }

    // positions grouped by label for triplet sampling
    let mut by_label: Vec<(usize, Vec<usize>)> = Vec::new();
    for (pos, &label) in labels.iter().enumerate() {
        match by_label.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(pos),
            None => by_label.push((label, vec![pos])),
        }
    }
    let mut triplets = Vec::with_capacity(labels.len());
    for (anchor, &label) in labels.iter().enumerate() {
        let same: &Vec<usize> = &by_label.iter().find(|(l, _)| *l == label).unwrap().1;
        let positive = loop {
            let cand = same[rng.random_range(0..same.len())];
            if cand != anchor {
                break cand;
            }
        };
        let negative = loop {
            let cand = rng.random_range(0..labels.len());
            if labels[cand] != label {
                break cand;
            }
        };
        triplets.push((anchor, positive, negative));
    }

    TrainBatch {
        features: batch_features,
        labels,
        triplets,
    }
}
