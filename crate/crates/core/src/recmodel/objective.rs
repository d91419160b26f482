use super::encoder::{backward, encode_with_tape, pool_sequence, user_representation, Tape};
use super::params::ParamSet;
use crate::corpus::Catalog;
use crate::error::{Error, Result};
use crate::scalar::{dot, norm, Scalar};

/// Pooling decay and softmax temperature used whenever a model scores items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scoring<T> {
    pub gamma: T,
    pub temperature: T,
}

impl<T: Scalar> Default for Scoring<T> {
    fn default() -> Self {
        Self { gamma: T::lit(0.8), temperature: T::one() }
    }
}

/// Counters for conditions handled silently during scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Cosine pairs where one side had zero norm and the score was set to 0.
    pub zero_norm_pairs: usize,
}

/// Cosine scores over a candidate catalog and their tempered softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDistribution<T> {
    pub scores: Vec<T>,
    pub probs: Vec<T>,
    pub log_probs: Vec<T>,
    pub temperature: T,
}

impl<T: Scalar> PredictionDistribution<T> {
    pub fn from_scores(scores: Vec<T>, temperature: T) -> Self {
        let log_probs = log_softmax(&scores, temperature);
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Self { scores, probs, log_probs, temperature }
    }

    /// Highest-probability candidate, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> T {
        -self.probs.iter().zip(&self.log_probs).fold(T::zero(), |acc, (&p, &l)| acc + p * l)
    }
}

pub fn log_softmax<T: Scalar>(scores: &[T], temperature: T) -> Vec<T> {
    let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s / temperature));
    let lse = scores.iter().map(|&s| (s / temperature - max).exp()).sum::<T>().ln() + max;
    scores.iter().map(|&s| s / temperature - lse).collect()
}

/// Cosine similarity, or 0 when either side has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T], diag: &mut Diagnostics) -> T {
    let na = norm(a);
    let nb = norm(b);
    if na == T::zero() || nb == T::zero() {
        diag.zero_norm_pairs += 1;
        return T::zero();
    }
    dot(a, b) / (na * nb)
}

/// Scores `sequence` against every catalog item.
pub fn score<T: Scalar>(
    params: &ParamSet<T>,
    sequence: &[usize],
    catalog: &Catalog<T>,
    scoring: &Scoring<T>,
    diag: &mut Diagnostics,
) -> Result<PredictionDistribution<T>> {
    if catalog.is_empty() {
        return Err(Error::invalid("cannot score against an empty catalog"));
    }
    let user = user_representation(params, sequence, catalog, scoring.gamma)?;
    let items = super::encoder::item_representations(params, catalog)?;
    Ok(score_against(&user, &items, scoring.temperature, diag))
}

/// Scores a precomputed user representation against precomputed item
/// representations.
pub fn score_against<T: Scalar>(
    user: &[T],
    items: &[Vec<T>],
    temperature: T,
    diag: &mut Diagnostics,
) -> PredictionDistribution<T> {
    let scores = items.iter().map(|r| cosine(user, r, diag)).collect();
    PredictionDistribution::from_scores(scores, temperature)
}

/// Weights of the three per-sample loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub ce: T,
    pub kd: T,
    pub entropy: T,
}

impl<T: Scalar> LossWeights<T> {
    pub fn ce() -> Self {
        Self { ce: T::one(), kd: T::zero(), entropy: T::zero() }
    }

    pub fn kd() -> Self {
        Self { ce: T::zero(), kd: T::one(), entropy: T::zero() }
    }

    pub fn entropy() -> Self {
        Self { ce: T::zero(), kd: T::zero(), entropy: T::one() }
    }
}

/// Unweighted loss components, summed over samples and multiplied by the
/// caller's scale.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts<T> {
    pub ce: T,
    pub kd: T,
    pub entropy: T,
}

impl<T: Scalar> LossParts<T> {
    pub fn total(&self, w: &LossWeights<T>) -> T {
        w.ce * self.ce + w.kd * self.kd + w.entropy * self.entropy
    }

    pub fn add(&mut self, other: &Self) {
        self.ce += other.ce;
        self.kd += other.kd;
        self.entropy += other.entropy;
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.kd.is_finite() && self.entropy.is_finite()
    }
}

/// One training or merging example scored against a shared catalog.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, T> {
    pub sequence: &'a [usize],
    /// Catalog index of the positive item, required when the CE weight is nonzero.
    pub positive: Option<usize>,
    /// Teacher log-probabilities over the catalog, required when the KD weight is nonzero.
    pub teacher_log_probs: Option<&'a [T]>,
}

impl<'a, T> Sample<'a, T> {
    pub fn with_positive(sequence: &'a [usize], positive: usize) -> Self {
        Self { sequence, positive: Some(positive), teacher_log_probs: None }
    }

    pub fn unlabeled(sequence: &'a [usize]) -> Self {
        Self { sequence, positive: None, teacher_log_probs: None }
    }
}

/// Computes the weighted loss of `samples` against `catalog` and adds
/// `scale * d loss / d params` into `grad`.
///
/// Sequences always index the full catalog. Scores, positives and teacher
/// distributions range over `candidates` (catalog indices) when given, over
/// the whole catalog otherwise.
///
/// Item representations are computed once and shared by all samples; the
/// gradient reaching each item is summed before its reverse pass, so the
/// cost is one forward and one backward pass per distinct input.
///
/// Per sample, with `p = softmax(cos / T)`:
/// CE is `-ln p[positive]`, KD is `sum p ln(p / q)` against the teacher `q`,
/// entropy is `-sum p ln p`.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_loss_grad<T: Scalar>(
    params: &ParamSet<T>,
    catalog: &Catalog<T>,
    candidates: Option<&[usize]>,
    samples: &[Sample<'_, T>],
    weights: &LossWeights<T>,
    scoring: &Scoring<T>,
    scale: T,
    grad: &mut ParamSet<T>,
    diag: &mut Diagnostics,
) -> Result<LossParts<T>> {
    let all: Vec<usize>;
    let candidates = match candidates {
        Some(c) => {
            if let Some(&bad) = c.iter().find(|&&i| i >= catalog.len()) {
                return Err(Error::invalid(format!("candidate {bad} outside catalog of {}", catalog.len())));
            }
            c
        }
        None => {
            all = (0..catalog.len()).collect();
            &all
        }
    };
    let n = candidates.len();
    if n == 0 {
        return Err(Error::invalid("cannot score against an empty catalog"));
    }
    grad.check_compatible(params, "gradient accumulator")?;
    for s in samples {
        if weights.ce != T::zero() {
            match s.positive {
                Some(p) if p < n => {}
                Some(p) => return Err(Error::invalid(format!("positive item {p} outside catalog of {n}"))),
                None => return Err(Error::invalid("cross-entropy term needs a positive item")),
            }
        }
        if weights.kd != T::zero() {
            match s.teacher_log_probs {
                Some(q) if q.len() == n => {}
                Some(q) => {
                    return Err(Error::shape(format!("teacher distribution covers {} items, catalog has {n}", q.len())))
                }
                None => return Err(Error::invalid("distillation term needs a teacher distribution")),
            }
        }
    }

    let mut item_reps = Vec::with_capacity(n);
    let mut item_tapes: Vec<Tape<T>> = Vec::with_capacity(n);
    for &i in candidates {
        let (r, tape) = encode_with_tape(params, catalog.feature(i))?;
        item_reps.push(r);
        item_tapes.push(tape);
    }
    let item_norms: Vec<T> = item_reps.iter().map(|r| norm(r)).collect();
    let d = params.output_dim();
    let mut item_grads = vec![vec![T::zero(); d]; n];
    let inv_t = T::one() / scoring.temperature;
    let mut parts = LossParts::default();

    for s in samples {
        let x = pool_sequence(catalog, s.sequence, scoring.gamma)?;
        let (user, tape) = encode_with_tape(params, &x)?;
        let nu = norm(&user);
        let mut scores = vec![T::zero(); n];
        for (j, r) in item_reps.iter().enumerate() {
            if nu == T::zero() || item_norms[j] == T::zero() {
                diag.zero_norm_pairs += 1;
            } else {
                scores[j] = dot(&user, r) / (nu * item_norms[j]);
            }
        }
        let logp = log_softmax(&scores, scoring.temperature);
        let p: Vec<T> = logp.iter().map(|l| l.exp()).collect();

        // d loss / d (score / T), accumulated term by term.
        let mut dz = vec![T::zero(); n];
        if weights.ce != T::zero() {
            let pos = s.positive.expect("checked above");
            parts.ce += scale * -logp[pos];
            for (j, g) in dz.iter_mut().enumerate() {
                let indicator = if j == pos { T::one() } else { T::zero() };
                *g += weights.ce * (p[j] - indicator);
            }
        }
        if weights.kd != T::zero() {
            let q = s.teacher_log_probs.expect("checked above");
            let a: Vec<T> = logp.iter().zip(q).map(|(&lp, &lq)| lp - lq).collect();
            let kl = p.iter().zip(&a).fold(T::zero(), |acc, (&pj, &aj)| acc + pj * aj);
            parts.kd += scale * kl;
            for (j, g) in dz.iter_mut().enumerate() {
                *g += weights.kd * p[j] * (a[j] - kl);
            }
        }
        if weights.entropy != T::zero() {
            let h = -p.iter().zip(&logp).fold(T::zero(), |acc, (&pj, &lj)| acc + pj * lj);
            parts.entropy += scale * h;
            for (j, g) in dz.iter_mut().enumerate() {
                *g -= weights.entropy * p[j] * (logp[j] + h);
            }
        }

        if nu == T::zero() {
            continue;
        }
        let mut user_grad = vec![T::zero(); d];
        for j in 0..n {
            let nj = item_norms[j];
            if nj == T::zero() || dz[j] == T::zero() {
                continue;
            }
            let gs = scale * dz[j] * inv_t;
            let s_j = scores[j];
            let r = &item_reps[j];
            let inv = T::one() / (nu * nj);
            for k in 0..d {
                user_grad[k] += gs * (r[k] * inv - s_j * user[k] / (nu * nu));
                item_grads[j][k] += gs * (user[k] * inv - s_j * r[k] / (nj * nj));
            }
        }
        backward(params, &tape, &user_grad, grad);
    }

    for (tape, g) in item_tapes.iter().zip(&item_grads) {
        if g.iter().any(|&v| v != T::zero()) {
            backward(params, tape, g, grad);
        }
    }
    Ok(parts)
}

/// `-ln p[positive]` for one sequence and its exact parameter gradient.
pub fn ce_loss_and_grad<T: Scalar>(
    params: &ParamSet<T>,
    sequence: &[usize],
    positive: usize,
    catalog: &Catalog<T>,
    scoring: &Scoring<T>,
) -> Result<(T, ParamSet<T>)> {
    single(params, catalog, Sample::with_positive(sequence, positive), LossWeights::ce(), scoring)
        .map(|(parts, g)| (parts.ce, g))
}

/// `KL(p_student || p_teacher)` for one sequence and its exact gradient with
/// respect to the student. The temperature is taken from the teacher.
pub fn kd_loss_and_grad<T: Scalar>(
    params: &ParamSet<T>,
    teacher: &PredictionDistribution<T>,
    sequence: &[usize],
    catalog: &Catalog<T>,
    gamma: T,
) -> Result<(T, ParamSet<T>)> {
    let sample = Sample { sequence, positive: None, teacher_log_probs: Some(&teacher.log_probs) };
    let scoring = Scoring { gamma, temperature: teacher.temperature };
    single(params, catalog, sample, LossWeights::kd(), &scoring).map(|(parts, g)| (parts.kd, g))
}

/// Prediction entropy for one sequence and its exact gradient.
pub fn entropy_loss_and_grad<T: Scalar>(
    params: &ParamSet<T>,
    sequence: &[usize],
    catalog: &Catalog<T>,
    scoring: &Scoring<T>,
) -> Result<(T, ParamSet<T>)> {
    single(params, catalog, Sample::unlabeled(sequence), LossWeights::entropy(), scoring)
        .map(|(parts, g)| (parts.entropy, g))
}

fn single<T: Scalar>(
    params: &ParamSet<T>,
    catalog: &Catalog<T>,
    sample: Sample<'_, T>,
    weights: LossWeights<T>,
    scoring: &Scoring<T>,
) -> Result<(LossParts<T>, ParamSet<T>)> {
    let mut grad = params.zeros_like();
    let mut diag = Diagnostics::default();
    let parts =
        accumulate_loss_grad(params, catalog, None, &[sample], &weights, scoring, T::one(), &mut grad, &mut diag)?;
    Ok((parts, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recmodel::params::{Metadata, ModelDims, Role};

    #[test]
    fn two_candidate_softmax() {
        let d = PredictionDistribution::from_scores(vec![1.0f64, -1.0], 1.0);
        assert!((d.probs[0] - 0.880797).abs() < 1e-6);
        assert!((d.probs[1] - 0.119203).abs() < 1e-6);
    }

    #[test]
    fn cosine_extremes() {
        let mut diag = Diagnostics::default();
        assert!((cosine(&[1.0f64, 2.0], &[2.0, 4.0], &mut diag) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 3.0], &mut diag), 0.0);
        assert_eq!(cosine(&[0.0f64, 0.0], &[0.0, 3.0], &mut diag), 0.0);
        assert_eq!(diag.zero_norm_pairs, 1);
    }

    #[test]
    fn softmax_normalizes_large_catalogs() {
        let scores: Vec<f32> = (0..10_000).map(|i| ((i * 7919) % 2001) as f32 / 1000.0 - 1.0).collect();
        let d = PredictionDistribution::from_scores(scores, 1.0);
        let sum: f64 = d.probs.iter().map(|&p| p as f64).sum();
        assert!((sum - 1.0).abs() < 1e-6, "{sum}");
        assert!(d.probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn entropy_value() {
        let logits: Vec<f64> = [0.7f64, 0.2, 0.1].iter().map(|p| p.ln()).collect();
        let d = PredictionDistribution::from_scores(logits, 1.0);
        assert!((d.entropy() - 0.8018).abs() < 5e-5);
    }

    fn tiny() -> (ParamSet<f64>, Catalog<f64>) {
        let dims = ModelDims { input: 8, hidden: 8, output: 4, layers: 3 };
        let p = ParamSet::random(&dims, 2).unwrap();
        let cat = Catalog::hashed((0..12).map(|i| format!("t{i}")).collect(), 8, 3, 1).unwrap();
        (p, cat)
    }

    #[test]
    fn zero_model_gives_uniform_ce() {
        let (p, cat) = tiny();
        let zero = ParamSet::zeros(
            &ModelDims { input: 8, hidden: 8, output: 4, layers: 3 },
            Metadata::new(Role::Base, None, 0),
        )
        .unwrap();
        let (loss, g) = ce_loss_and_grad(&zero, &[0, 1], 3, &cat, &Scoring::default()).unwrap();
        assert!((loss - (12f64).ln()).abs() < 1e-12);
        assert!(g.values().all(|&v| v == 0.0));
        // A single-item user is its own item, so that item scores exactly 1.
        let mut diag = Diagnostics::default();
        let d = score(&p, &[5], &cat, &Scoring::default(), &mut diag).unwrap();
        assert!((d.scores[5] - 1.0).abs() < 1e-12);
        assert!((d.scores[d.argmax()] - d.scores[5]).abs() < 1e-12);
    }

    #[test]
    fn kd_identity_and_value() {
        let (p, cat) = tiny();
        let scoring = Scoring::default();
        let mut diag = Diagnostics::default();
        let teacher = score(&p, &[4], &cat, &scoring, &mut diag).unwrap();
        let (loss, g) = kd_loss_and_grad(&p, &teacher, &[4], &cat, 0.8).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(g.values().all(|v| v.abs() < 1e-10));

        // Hand value for (0.9, 0.1) against (0.5, 0.5): 0.9 ln 1.8 + 0.1 ln 0.2.
        let student = PredictionDistribution::from_scores(vec![0.9f64.ln(), 0.1f64.ln()], 1.0);
        let teacher = PredictionDistribution::from_scores(vec![0.0f64, 0.0], 1.0);
        let kl: f64 = student
            .probs
            .iter()
            .zip(&student.log_probs)
            .zip(&teacher.log_probs)
            .map(|((p, lp), lq)| p * (lp - lq))
            .sum();
        assert!((kl - 0.368).abs() < 5e-4);
    }

    #[test]
    fn catalog_mismatch_and_missing_positive() {
        let (p, cat) = tiny();
        let teacher = PredictionDistribution::from_scores(vec![0.0f64; 5], 1.0);
        assert!(matches!(kd_loss_and_grad(&p, &teacher, &[0], &cat, 0.8), Err(Error::ShapeMismatch(_))));
        assert!(ce_loss_and_grad(&p, &[0], 12, &cat, &Scoring::default()).is_err());
    }
}
