//! Training objective: class-balanced localization loss, symmetric
//! contrastive alignment with duplicate-query masking, distracted-query
//! KL regularization, and their weighted sum. Also the edit-distance
//! machinery the distraction term is built from.

use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::ops;
use crate::tape::Var;

/// Initial value of the learnable log temperature (exp ≈ 14.3).
pub const LOGIT_SCALE_INIT: Real = 2.659;

/// Exponentiated logit scale, clamped into [1, 100].
pub fn temperature(log_scale: Var<'_>) -> Var<'_> {
    ops::clamp(ops::exp(log_scale), 1.0, 100.0)
}

/// Class-balanced cross-entropy over a probability grid. The balance factor
/// β = 1 − Σy/|Y| comes from the target alone: cells worth of the rarer
/// positive class get the larger weight. Degenerate all-zero and all-one
/// targets zero out their only surviving term, so the loss is finite (and
/// zero) there by construction.
pub fn loc_loss<'t>(loc: Var<'t>, target: &Array) -> Var<'t> {
    let tape = loc.tape();
    assert_eq!(
        loc.value().numel(),
        target.numel(),
        "localization target size mismatch"
    );
    debug_assert!(
        target.data().iter().all(|&y| y == 0.0 || y == 1.0),
        "localization target must be binary"
    );
    let cells = target.numel() as Real;
    let ones: Real = target.data().iter().sum();
    let beta = 1.0 - ones / cells;

    let y = tape.constant(target.reshape(&loc.value().dims().to_vec()));
    let pos = ops::mul_scalar(ops::mul(y, ops::ln(loc)), -beta);
    let neg = ops::mul_scalar(
        ops::mul(ops::rsub_scalar(y, 1.0), ops::ln(ops::rsub_scalar(loc, 1.0))),
        -(1.0 - beta),
    );
    ops::mean_all(ops::add(pos, neg))
}

/// Additive logit mask for a batch whose query strings may repeat: pairs of
/// distinct items sharing a query get -1e4 on both off-diagonal logits,
/// which removes them from every softmax denominator exactly (the shifted
/// exponent underflows to zero). Returns None when all queries are distinct.
pub fn duplicate_mask<S: AsRef<str>>(queries: &[S]) -> Option<Array> {
    let b = queries.len();
    let mut mask = Array::zeros(&[b, b]);
    let mut any = false;
    for i in 0..b {
        for j in 0..b {
            if i != j && queries[i].as_ref() == queries[j].as_ref() {
                mask.data_mut()[i * b + j] = -1e4;
                any = true;
            }
        }
    }
    any.then_some(mask)
}

/// Generalizes [`duplicate_mask`] to known positives: off-diagonal logit
/// (i, j) gets -1e4 whenever batch query j is one of image i's annotated
/// strings, so an image is never pushed away from text it actually shows.
/// Duplicated queries are subsumed, since each row's own query is among its
/// positives. Returns None when no off-diagonal pair collides.
pub fn positive_mask<S, P>(queries: &[S], positives: &[P]) -> Option<Array>
where
    S: AsRef<str>,
    P: AsRef<[String]>,
{
    let b = queries.len();
    assert_eq!(b, positives.len(), "one positive set per batch item");
    let mut mask = Array::zeros(&[b, b]);
    let mut any = false;
    for i in 0..b {
        for j in 0..b {
            if i != j
                && positives[i]
                    .as_ref()
                    .iter()
                    .any(|p| p == queries[j].as_ref())
            {
                mask.data_mut()[i * b + j] = -1e4;
                any = true;
            }
        }
    }
    any.then_some(mask)
}

/// Symmetric contrastive loss over a batch of matched image/text embedding
/// pairs: rows are unit-normalized, the B x B cosine logits are scaled by the
/// exponentiated log scale, and the mean image-to-text and text-to-image
/// cross-entropies of the diagonal are averaged.
pub fn align_loss<'t>(
    img: Var<'t>,
    txt: Var<'t>,
    log_scale: Var<'t>,
    mask: Option<&Array>,
) -> Result<Var<'t>> {
    let b = img.dims()[0];
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "alignment needs a batch of at least 2, got {b}"
        )));
    }
    if txt.dims() != img.dims() {
        return Err(Error::ShapeMismatch {
            op: "align_loss",
            detail: format!("{:?} vs {:?}", img.dims(), txt.dims()),
        });
    }
    let tape = img.tape();
    let im = ops::normalize_rows(img, 0.0);
    let tx = ops::normalize_rows(txt, 0.0);
    let mut logits = ops::scale_by(ops::matmul(im, ops::transpose(tx)), temperature(log_scale));
    if let Some(m) = mask {
        assert_eq!(m.dims(), &[b, b], "duplicate mask shape mismatch");
        logits = ops::add(logits, tape.constant(m.clone()));
    }
    let i2t = ops::neg(ops::diag_mean(ops::log_softmax_rows(logits)));
    let t2i = ops::neg(ops::diag_mean(ops::log_softmax_rows(ops::transpose(logits))));
    Ok(ops::mul_scalar(ops::add(i2t, t2i), 0.5))
}

/// Levenshtein distance with unit insert/delete/substitute costs, two-row
/// dynamic program.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The `k` dictionary words nearest to `query` by edit distance, the query
/// itself excluded, ordered by (distance, word). Deterministic and
/// duplicate-free.
pub fn gen_distracted(query: &str, words: &[String], k: usize) -> Result<Vec<String>> {
    let mut ranked: Vec<(usize, &String)> = Vec::with_capacity(words.len());
    let mut seen = std::collections::HashSet::new();
    for w in words {
        if w == query || !seen.insert(w.as_str()) {
            continue;
        }
        ranked.push((edit_distance(query, w), w));
    }
    if ranked.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need {k} distracted queries but only {} candidates exist",
            ranked.len()
        )));
    }
    ranked.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, w)| w.clone()).collect())
}

/// Softmax of the negated distances, the fixed target distribution for the
/// distraction loss.
fn distance_target(distances: &[Real]) -> Vec<Real> {
    let m = distances.iter().cloned().fold(Real::INFINITY, Real::min);
    let exps: Vec<Real> = distances.iter().map(|&d| (-(d - m)).exp()).collect();
    let z: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// KL divergence from the edit-distance target p = softmax(-D) to the
/// similarity prediction q = softmax(scale·S). Zero iff the distributions
/// coincide; a single candidate carries no information and returns 0.
pub fn distract_loss<'t>(sims: Var<'t>, distances: &[Real], log_scale: Var<'t>) -> Var<'t> {
    let tape = sims.tape();
    let k = sims.value().numel();
    assert_eq!(k, distances.len(), "similarity/distance count mismatch");
    if k < 2 {
        return tape.constant(Array::scalar(0.0));
    }
    let p = distance_target(distances);
    let plogp: Real = p.iter().map(|&pi| pi * pi.ln()).sum();
    let scaled = ops::scale_by(ops::reshape(sims, &[1, k]), temperature(log_scale));
    let logq = ops::log_softmax_rows(scaled);
    let pc = tape.constant(Array::from_vec(&[1, k], p));
    ops::add_scalar(ops::neg(ops::sum_all(ops::mul(pc, logq))), plogp)
}

/// Weighted sum of the three loss terms.
pub fn total_loss<'t>(
    l_loc: Var<'t>,
    l_align: Var<'t>,
    l_distract: Var<'t>,
    lambdas: [Real; 3],
) -> Var<'t> {
    ops::add(
        ops::add(
            ops::mul_scalar(l_loc, lambdas[0]),
            ops::mul_scalar(l_align, lambdas[1]),
        ),
        ops::mul_scalar(l_distract, lambdas[2]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use crate::params::ParamSet;
    use crate::rng;
    use crate::tape::Tape;

    fn scalar_of(v: Var<'_>) -> Real {
        v.value().item()
    }

    #[test]
    fn balance_factor_weights_both_classes() {
        // 3 positives among 12 cells: β = 0.75. With a flat 0.5 prediction
        // every positive contributes 0.75·ln2 and every negative 0.25·ln2.
        let mut y = Array::zeros(&[1, 3, 4]);
        for i in 0..3 {
            y.data_mut()[i] = 1.0;
        }
        let tape = Tape::new();
        let loc = tape.constant(Array::filled(&[1, 3, 4], 0.5));
        let loss = scalar_of(loc_loss(loc, &y));
        let ln2 = (2.0 as Real).ln();
        let expect = (3.0 * 0.75 * ln2 + 9.0 * 0.25 * ln2) / 12.0;
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
    }

    #[test]
    fn matching_prediction_minimizes_over_constants() {
        let mut y = Array::zeros(&[1, 2, 4]);
        y.data_mut()[1] = 1.0;
        y.data_mut()[5] = 1.0;
        let tape = Tape::new();
        let clamped = y.map(|v| v.clamp(1e-6, 1.0 - 1e-6));
        let best = scalar_of(loc_loss(tape.constant(clamped), &y));
        for step in 1..100 {
            let c = step as Real / 100.0;
            let loss = scalar_of(loc_loss(tape.constant(Array::filled(&[1, 2, 4], c)), &y));
            assert!(best <= loss + 1e-12, "constant {c} beat the target");
        }
    }

    #[test]
    fn degenerate_targets_yield_zero_loss() {
        let tape = Tape::new();
        let loc = tape.constant(Array::filled(&[1, 2, 2], 0.3));
        let zeros = Array::zeros(&[1, 2, 2]);
        let ones = Array::filled(&[1, 2, 2], 1.0);
        assert_eq!(scalar_of(loc_loss(loc, &zeros)), 0.0);
        assert_eq!(scalar_of(loc_loss(loc, &ones)), 0.0);
    }

    #[test]
    fn loc_loss_gradients_check_out() {
        let mut ps = ParamSet::new();
        let z = ps.add("z", Array::randn(&[1, 2, 3], 0.0, 1.0, &mut rng::seeded(3)));
        let mut y = Array::zeros(&[1, 2, 3]);
        y.data_mut()[0] = 1.0;
        y.data_mut()[4] = 1.0;
        let cfg = GradCheckConfig {
            tolerance: 1e-5,
            ..GradCheckConfig::default()
        };
        let ids = [z];
        let report = grad_check(&mut ps, &ids, &cfg, |tape, ps| {
            let loc = ops::clamp(ops::sigmoid(tape.param(ps, z)), 1e-6, 1.0 - 1e-6);
            loc_loss(loc, &y)
        });
        assert!(report.passed(), "{}", report.summary());
    }

    fn log_scale_var<'t>(tape: &'t Tape, scale: Real) -> Var<'t> {
        tape.constant(Array::scalar(scale.ln()))
    }

    #[test]
    fn orthonormal_pair_batch_has_closed_form() {
        // B=2, matched pairs on orthogonal axes, scale s: each direction's
        // cross-entropy is log(1 + e^{-s}).
        let tape = Tape::new();
        let img = tape.constant(Array::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let txt = tape.constant(Array::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        for s in [1.0 as Real, 4.0, 14.3] {
            let loss = scalar_of(
                align_loss(img, txt, log_scale_var(&tape, s), None).unwrap(),
            );
            let expect = (1.0 + (-s).exp()).ln();
            assert!((loss - expect).abs() < 1e-9, "s={s}: {loss} vs {expect}");
        }
    }

    #[test]
    fn uniform_logits_cost_log_b() {
        for b in [2usize, 4, 8] {
            let tape = Tape::new();
            let mut rows = Vec::new();
            for _ in 0..b {
                rows.extend_from_slice(&[0.6, 0.8]);
            }
            let img = tape.constant(Array::from_vec(&[b, 2], rows.clone()));
            let txt = tape.constant(Array::from_vec(&[b, 2], rows));
            let loss = scalar_of(align_loss(img, txt, log_scale_var(&tape, 7.0), None).unwrap());
            let expect = (b as Real).ln();
            assert!((loss - expect).abs() < 1e-9, "B={b}: {loss} vs {expect}");
        }
    }

    #[test]
    fn batch_order_does_not_matter() {
        let mut r = rng::seeded(5);
        let img = Array::randn(&[5, 4], 0.0, 1.0, &mut r);
        let txt = Array::randn(&[5, 4], 0.0, 1.0, &mut r);
        let perm = [3usize, 0, 4, 1, 2];
        let permute = |a: &Array| {
            let mut out = Array::zeros(&[5, 4]);
            for (dst, &src) in perm.iter().enumerate() {
                out.data_mut()[dst * 4..dst * 4 + 4]
                    .copy_from_slice(&a.data()[src * 4..src * 4 + 4]);
            }
            out
        };
        let tape = Tape::new();
        let base = scalar_of(
            align_loss(
                tape.constant(img.clone()),
                tape.constant(txt.clone()),
                log_scale_var(&tape, 10.0),
                None,
            )
            .unwrap(),
        );
        let shuffled = scalar_of(
            align_loss(
                tape.constant(permute(&img)),
                tape.constant(permute(&txt)),
                log_scale_var(&tape, 10.0),
                None,
            )
            .unwrap(),
        );
        assert!((base - shuffled).abs() < 1e-12);
    }

    #[test]
    fn tiny_batch_rejected() {
        let tape = Tape::new();
        let img = tape.constant(Array::from_vec(&[1, 2], vec![1.0, 0.0]));
        assert!(align_loss(img, img, log_scale_var(&tape, 5.0), None).is_err());
    }

    /// Reference cross-entropy with an explicit exclusion set, f64 throughout.
    fn reference_masked_ce(logits: &[Vec<Real>], masked: &[(usize, usize)]) -> Real {
        let b = logits.len();
        let excluded = |i: usize, j: usize| masked.contains(&(i, j));
        let mut total = 0.0;
        // Image-to-text rows.
        for i in 0..b {
            let mut z = 0.0;
            for j in 0..b {
                if !excluded(i, j) {
                    z += logits[i][j].exp();
                }
            }
            total += -(logits[i][i].exp() / z).ln();
        }
        // Text-to-image columns.
        for j in 0..b {
            let mut z = 0.0;
            for i in 0..b {
                if !excluded(i, j) {
                    z += logits[i][j].exp();
                }
            }
            total += -(logits[j][j].exp() / z).ln();
        }
        total / (2 * b) as Real
    }

    #[test]
    fn duplicate_queries_leave_both_denominators() {
        let mut r = rng::seeded(9);
        let img = Array::randn(&[3, 4], 0.0, 1.0, &mut r);
        let txt = Array::randn(&[3, 4], 0.0, 1.0, &mut r);
        let queries = ["house", "house", "cafe"];
        let mask = duplicate_mask(&queries).expect("duplicates present");
        assert_eq!(mask.data()[1], -1e4);
        assert_eq!(mask.data()[3], -1e4);
        assert_eq!(mask.data()[0], 0.0);

        let tape = Tape::new();
        let scale = 3.0 as Real;
        let loss = scalar_of(
            align_loss(
                tape.constant(img.clone()),
                tape.constant(txt.clone()),
                log_scale_var(&tape, scale),
                Some(&mask),
            )
            .unwrap(),
        );

        // Independent reference: cosine logits with pairs (0,1)/(1,0) removed.
        let unit = |a: &Array, i: usize| {
            let row = &a.data()[i * 4..i * 4 + 4];
            let n = row.iter().map(|v| v * v).sum::<Real>().sqrt();
            row.iter().map(|v| v / n).collect::<Vec<_>>()
        };
        let mut logits = vec![vec![0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = (unit(&img, i), unit(&txt, j));
                logits[i][j] = scale * a.iter().zip(&b).map(|(x, y)| x * y).sum::<Real>();
            }
        }
        let expect = reference_masked_ce(&logits, &[(0, 1), (1, 0)]);
        assert!((loss - expect).abs() < 1e-9, "{loss} vs {expect}");
        assert!(duplicate_mask(&["a", "b", "c"]).is_none());
    }

    #[test]
    fn positive_mask_excludes_cross_positives_only() {
        let owned = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
        // Image 0 also shows "cafe" (query 2); image 2 shows only its own
        // query. The collision is one-directional.
        let queries = ["house", "bar", "cafe"];
        let positives = [
            owned(&["house", "cafe"]),
            owned(&["bar"]),
            owned(&["cafe"]),
        ];
        let mask = positive_mask(&queries, &positives).expect("collision present");
        assert_eq!(mask.dims(), &[3, 3]);
        assert_eq!(mask.data()[0 * 3 + 2], -1e4);
        let live: Vec<usize> = mask
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(live, [2], "exactly one masked cell");

        // Duplicate queries collide through their own positive sets.
        let dup_queries = ["house", "house"];
        let dup_positives = [owned(&["house"]), owned(&["house", "inn"])];
        let dup = positive_mask(&dup_queries, &dup_positives).expect("duplicates collide");
        assert_eq!(dup.data(), &[0.0, -1e4, -1e4, 0.0]);

        // Disjoint batches need no mask at all.
        assert!(positive_mask(&queries, &[owned(&["house"]), owned(&["bar"]), owned(&["cafe"])])
            .is_none());
    }

    #[test]
    fn align_loss_gradients_check_out() {
        let mut ps = ParamSet::new();
        let mut r = rng::seeded(11);
        let img = ps.add("img", Array::randn(&[3, 4], 0.0, 1.0, &mut r));
        let txt = ps.add("txt", Array::randn(&[3, 4], 0.0, 1.0, &mut r));
        let ls = ps.add("logit_scale", Array::scalar(LOGIT_SCALE_INIT));
        let cfg = GradCheckConfig {
            tolerance: 1e-4,
            ..GradCheckConfig::default()
        };
        let ids = [img, txt, ls];
        let report = grad_check(&mut ps, &ids, &cfg, |tape, ps| {
            align_loss(
                tape.param(ps, img),
                tape.param(ps, txt),
                tape.param(ps, ls),
                None,
            )
            .unwrap()
        });
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn edit_distance_basics() {
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", ""), 3);
        assert_eq!(edit_distance("advice", "advise"), 1);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("house", "house"), 0);
        assert_eq!(edit_distance("house", "horse"), 1);
    }

    /// Full-matrix reference implementation for cross-checking.
    fn edit_distance_matrix(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 0..=a.len() {
            d[i][0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn edit_distance_matches_matrix_reference() {
        use rand::Rng;
        let mut r = rng::seeded(13);
        let alphabet: Vec<char> = ('a'..='e').collect();
        for _ in 0..200 {
            fn word(r: &mut impl Rng, alphabet: &[char], len: usize) -> String {
                (0..len).map(|_| alphabet[r.gen_range(0..alphabet.len())]).collect()
            }
            let la = r.gen_range(0..10);
            let a = word(&mut r, &alphabet, la);
            let lb = r.gen_range(0..10);
            let b = word(&mut r, &alphabet, lb);
            assert_eq!(edit_distance(&a, &b), edit_distance_matrix(&a, &b), "{a:?} vs {b:?}");
            assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
        }
    }

    fn words(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn distracted_queries_rank_by_distance_then_word() {
        let dict = words(&["horse", "housed", "mouse", "tree", "house"]);
        let got = gen_distracted("house", &dict, 3).unwrap();
        assert_eq!(got, words(&["horse", "housed", "mouse"]));
    }

    #[test]
    fn near_miss_word_ranks_first() {
        let dict = words(&["banana", "advise", "advice", "orange"]);
        let got = gen_distracted("advice", &dict, 1).unwrap();
        assert_eq!(got, words(&["advise"]));
    }

    #[test]
    fn exhaustive_k_returns_all_other_words_sorted() {
        let dict = words(&["bb", "aa", "query", "cc"]);
        let got = gen_distracted("query", &dict, 3).unwrap();
        // All remaining words, ordered by (distance, word).
        let mut expect: Vec<(usize, String)> = ["aa", "bb", "cc"]
            .iter()
            .map(|w| (edit_distance("query", w), w.to_string()))
            .collect();
        expect.sort();
        let expect: Vec<String> = expect.into_iter().map(|(_, w)| w).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn small_dictionary_rejected() {
        let dict = words(&["house", "mouse"]);
        assert!(gen_distracted("house", &dict, 2).is_err());
    }

    #[test]
    fn matched_distributions_cost_nothing() {
        let tape = Tape::new();
        // Uniform case: equal distances, equal similarities.
        let sims = tape.constant(Array::from_vec(&[1, 4], vec![0.3; 4]));
        let loss = scalar_of(distract_loss(sims, &[2.0; 4], log_scale_var(&tape, 1.0)));
        assert!(loss.abs() < 1e-12);

        // Constructed match: scale 1, similarities = negated distances.
        let d = [1.0 as Real, 2.0, 3.0];
        let sims = tape.constant(Array::from_vec(&[1, 3], vec![-1.0, -2.0, -3.0]));
        let loss = scalar_of(distract_loss(sims, &d, log_scale_var(&tape, 1.0)));
        assert!(loss.abs() < 1e-12, "{loss}");

        // Any perturbation strictly increases the divergence.
        for (idx, eps) in [(0usize, 0.05), (1, -0.08), (2, 0.1)] {
            let mut v = vec![-1.0, -2.0, -3.0];
            v[idx] += eps;
            let sims = tape.constant(Array::from_vec(&[1, 3], v));
            let bumped = scalar_of(distract_loss(sims, &d, log_scale_var(&tape, 1.0)));
            assert!(bumped > 1e-6, "perturbation {idx} gave {bumped}");
        }
    }

    #[test]
    fn single_candidate_is_free() {
        let tape = Tape::new();
        let sims = tape.constant(Array::from_vec(&[1, 1], vec![0.9]));
        assert_eq!(scalar_of(distract_loss(sims, &[1.0], log_scale_var(&tape, 1.0))), 0.0);
    }

    #[test]
    fn distract_loss_gradients_check_out() {
        let mut ps = ParamSet::new();
        let s = ps.add("sims", Array::from_vec(&[1, 4], vec![0.2, -0.1, 0.4, 0.05]));
        let ls = ps.add("logit_scale", Array::scalar(1.2));
        let d = [1.0 as Real, 3.0, 1.0, 2.0];
        let cfg = GradCheckConfig {
            tolerance: 1e-4,
            ..GradCheckConfig::default()
        };
        let ids = [s, ls];
        let report = grad_check(&mut ps, &ids, &cfg, |tape, ps| {
            distract_loss(tape.param(ps, s), &d, tape.param(ps, ls))
        });
        assert!(report.passed(), "{}", report.summary());
    }

    #[test]
    fn weighted_sum_combines_parts() {
        let tape = Tape::new();
        let l1 = tape.constant(Array::scalar(0.2));
        let l2 = tape.constant(Array::scalar(0.3));
        let l3 = tape.constant(Array::scalar(0.5));
        assert!((scalar_of(total_loss(l1, l2, l3, [1.0, 1.0, 1.0])) - 1.0).abs() < 1e-12);
        assert!((scalar_of(total_loss(l1, l2, l3, [1.0, 1.0, 0.0])) - 0.5).abs() < 1e-12);
        assert!((scalar_of(total_loss(l1, l2, l3, [5.0, 1.0, 1.0])) - 1.8).abs() < 1e-12);
    }
}
