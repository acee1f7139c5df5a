//! Two-way word clustering that routes queries to prompt banks: k-means over
//! unit-normalized word embeddings, with the cluster holding the most common
//! grammatical glue words labeled Function.

use crate::array::{Array, Real};
use crate::error::{Error, Result};
use crate::rng;
use crate::text::WordClass;
use rand::Rng;

/// Fixed vote list that decides which cluster is Function.
pub const FUNCTION_SEEDS: [&str; 6] = ["and", "the", "with", "of", "for", "to"];

const MAX_ITERS: usize = 100;
const SHIFT_TOL: Real = 1e-6;

/// Fitted clustering: centroids (not necessarily unit length, being means of
/// unit vectors), one class label per centroid, and the fit inputs needed to
/// reproduce it.
pub struct ClusterModel {
    /// k x e centroid rows.
    pub centroids: Array,
    pub labels: Vec<WordClass>,
    pub seed: u64,
    /// Canonically sorted, deduplicated word list the fit used.
    pub words: Vec<String>,
    /// Within-cluster sum of squares at each assignment step, diagnostics only.
    pub wcss: Vec<Real>,
}

fn unit_row(v: Array, word: &str) -> Result<Vec<Real>> {
    let data = v.into_data();
    let norm = data.iter().map(|x| x * x).sum::<Real>().sqrt();
    if norm < 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "embedding of {word:?} has zero norm"
        )));
    }
    Ok(data.iter().map(|x| x / norm).collect())
}

fn dist2(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the row in `cents` nearest to `point` by squared Euclidean
/// distance, lower index on ties.
fn nearest(point: &[Real], cents: &[Vec<Real>]) -> (usize, Real) {
    let mut best = (0, Real::INFINITY);
    for (j, c) in cents.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Clusters `words` into `k` groups. The word list is sorted and deduplicated
/// first and the RNG draws only indices, so fitting is invariant to input
/// order. Seeding follows the k-means++ rule; Lloyd iterations stop when no
/// centroid moves more than 1e-6 or after 100 rounds.
pub fn fit_clusters<F>(words: &[String], k: usize, seed: u64, mut embed: F) -> Result<ClusterModel>
where
    F: FnMut(&str) -> Result<Array>,
{
    if k == 0 {
        return Err(Error::InvalidArgument("cluster count must be >= 1".into()));
    }
    let mut sorted: Vec<String> = words.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} distinct words cannot form {k} clusters",
            sorted.len()
        )));
    }

    let mut points: Vec<Vec<Real>> = Vec::with_capacity(sorted.len());
    for w in &sorted {
        let row = unit_row(embed(w)?, w)?;
        if let Some(first) = points.first() {
            if row.len() != first.len() {
                return Err(Error::ShapeMismatch {
                    op: "fit_clusters",
                    detail: format!(
                        "embedding width changed from {} to {}",
                        first.len(),
                        row.len()
                    ),
                });
            }
        }
        points.push(row);
    }
    let n = points.len();

    // k-means++ seeding: first center uniform, each next drawn with
    // probability proportional to squared distance from the chosen set.
    let mut rng = rng::seeded(seed);
    let mut cents: Vec<Vec<Real>> = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<Real> = points.iter().map(|p| dist2(p, &cents[0])).collect();
    while cents.len() < k {
        let total: Real = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "fewer than {k} distinct embeddings; centroids would coincide"
            )));
        }
        let mut r = rng.gen::<f64>() as Real * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            r -= d;
            if r <= 0.0 {
                pick = i;
                break;
            }
        }
        cents.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &cents[cents.len() - 1]));
        }
    }

    // Lloyd. An empty cluster keeps its previous centroid.
    let mut assign = vec![0usize; n];
    let mut wcss = Vec::new();
    for _ in 0..MAX_ITERS {
        let mut total = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &cents);
            assign[i] = j;
            total += d;
        }
        wcss.push(total);

        let e = cents[0].len();
        let mut sums = vec![vec![0.0 as Real; e]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, &x) in sums[assign[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: Real = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as Real;
            let new: Vec<Real> = sums[j].iter().map(|s| s * inv).collect();
            shift = shift.max(dist2(&new, &cents[j]).sqrt());
            cents[j] = new;
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    // Final assignment against the converged centroids, for labeling.
    for (i, p) in points.iter().enumerate() {
        assign[i] = nearest(p, &cents).0;
    }

    let labels = label_clusters(k, &sorted, &assign);
    let e = cents[0].len();
    let flat: Vec<Real> = cents.into_iter().flatten().collect();
    Ok(ClusterModel {
        centroids: Array::from_vec(&[k, e], flat),
        labels,
        seed,
        words: sorted,
        wcss,
    })
}

/// One cluster gets the Function label: the one holding the majority of the
/// seed vote words, ties and an empty vote going to the lower index. A single
/// cluster is always Content.
fn label_clusters(k: usize, words: &[String], assign: &[usize]) -> Vec<WordClass> {
    if k == 1 {
        return vec![WordClass::Content];
    }
    let mut votes = vec![0usize; k];
    for (w, &a) in words.iter().zip(assign) {
        if FUNCTION_SEEDS.contains(&w.as_str()) {
            votes[a] += 1;
        }
    }
    let winner = votes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(j, _)| j)
        .unwrap();
    (0..k)
        .map(|j| {
            if j == winner {
                WordClass::Function
            } else {
                WordClass::Content
            }
        })
        .collect()
}

/// Routes one query: multi-word queries are Content unconditionally; a single
/// word takes the class of the nearest centroid by cosine distance, lower
/// index on ties.
pub fn classify<F>(query: &str, model: &ClusterModel, mut embed: F) -> Result<WordClass>
where
    F: FnMut(&str) -> Result<Array>,
{
    let q = query.trim();
    if q.split_whitespace().count() > 1 {
        return Ok(WordClass::Content);
    }
    let v = unit_row(embed(q)?, q)?;
    let k = model.centroids.dims()[0];
    let e = model.centroids.dims()[1];
    let data = model.centroids.data();
    let mut best = (0usize, Real::INFINITY);
    for j in 0..k {
        let c = &data[j * e..(j + 1) * e];
        let cn = c.iter().map(|x| x * x).sum::<Real>().sqrt();
        // v is unit length; a degenerate zero centroid sits at maximum
        // distance so it can never capture a query.
        let dist = if cn < 1e-12 {
            2.0
        } else {
            1.0 - v.iter().zip(c).map(|(a, b)| a * b).sum::<Real>() / cn
        };
        if dist < best.1 {
            best = (j, dist);
        }
    }
    Ok(model.labels[best.0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    /// Deterministic toy embedding: function seed words go to one axis,
    /// everything else to another, plus a small word-dependent wobble.
    fn blobby(word: &str) -> Result<Array> {
        let h = word.bytes().fold(7u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64));
        let wobble = (h % 97) as Real / 97.0 * 0.05;
        let mut v = vec![0.0; 8];
        if FUNCTION_SEEDS.contains(&word) {
            v[1] = 1.0;
        } else {
            v[0] = 1.0;
        }
        v[2] = wobble;
        Ok(Array::from_vec(&[8], v))
    }

    fn vocabulary() -> Vec<String> {
        strs(&[
            "and", "the", "with", "of", "for", "to", "house", "coffee", "market", "hotel",
            "pizza", "open", "exit", "sale",
        ])
    }

    #[test]
    fn blob_centroids_match_analytic_means() {
        let words = vocabulary();
        let model = fit_clusters(&words, 2, 5, blobby).unwrap();

        // Expected: the mean of each blob's unit-normalized embeddings.
        let mut sums = [vec![0.0 as Real; 8], vec![0.0 as Real; 8]];
        let mut counts = [0usize; 2];
        for w in &words {
            let v = unit_row(blobby(w).unwrap(), w).unwrap();
            let side = usize::from(FUNCTION_SEEDS.contains(&w.as_str()));
            counts[side] += 1;
            for (s, x) in sums[side].iter_mut().zip(v) {
                *s += x;
            }
        }
        for side in 0..2 {
            let mean: Vec<Real> = sums[side].iter().map(|s| s / counts[side] as Real).collect();
            let matched = (0..2).any(|j| {
                let row = &model.centroids.data()[j * 8..(j + 1) * 8];
                dist2(row, &mean).sqrt() < 1e-6
            });
            assert!(matched, "no centroid near blob mean {side}");
        }
    }

    #[test]
    fn seed_majority_cluster_is_function() {
        let words = vocabulary();
        let model = fit_clusters(&words, 2, 5, blobby).unwrap();
        assert_eq!(
            model.labels.iter().filter(|&&l| l == WordClass::Function).count(),
            1
        );
        assert_eq!(classify("the", &model, blobby).unwrap(), WordClass::Function);
        assert_eq!(classify("and", &model, blobby).unwrap(), WordClass::Function);
        assert_eq!(classify("house", &model, blobby).unwrap(), WordClass::Content);
        assert_eq!(classify("pizza", &model, blobby).unwrap(), WordClass::Content);
    }

    #[test]
    fn multi_word_queries_are_content() {
        let model = fit_clusters(&vocabulary(), 2, 5, blobby).unwrap();
        assert_eq!(
            classify("no smoking", &model, blobby).unwrap(),
            WordClass::Content
        );
        // Even a phrase of pure function words routes to Content.
        assert_eq!(
            classify("of the", &model, blobby).unwrap(),
            WordClass::Content
        );
    }

    #[test]
    fn refit_is_deterministic_and_order_invariant() {
        let words = vocabulary();
        let mut shuffled = words.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        let a = fit_clusters(&words, 2, 9, blobby).unwrap();
        let b = fit_clusters(&shuffled, 2, 9, blobby).unwrap();
        assert_eq!(a.centroids.data(), b.centroids.data());
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.words, b.words);
    }

    #[test]
    fn single_cluster_is_content_and_catches_everything() {
        let model = fit_clusters(&vocabulary(), 1, 5, blobby).unwrap();
        assert_eq!(model.labels, vec![WordClass::Content]);
        assert_eq!(classify("the", &model, blobby).unwrap(), WordClass::Content);
        assert_eq!(classify("house", &model, blobby).unwrap(), WordClass::Content);
    }

    #[test]
    fn wcss_never_increases() {
        let model = fit_clusters(&vocabulary(), 3, 13, blobby).unwrap();
        for pair in model.wcss.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "wcss rose: {pair:?}");
        }
    }

    #[test]
    fn too_few_distinct_words_rejected() {
        let words = strs(&["same", "same", "same"]);
        assert!(fit_clusters(&words, 2, 5, blobby).is_err());
    }

    #[test]
    fn coincident_embeddings_rejected() {
        // Distinct words but a constant embedding: no two distinct centroids
        // exist, so seeding must fail rather than emit duplicates.
        let constant = |_w: &str| Ok(Array::from_vec(&[4], vec![1.0, 0.0, 0.0, 0.0]));
        let words = strs(&["aa", "bb", "cc"]);
        assert!(fit_clusters(&words, 2, 5, constant).is_err());
    }

    #[test]
    fn equidistant_query_takes_lower_indexed_centroid() {
        // Hand-built model with axis-aligned centroids so the tie is exact in
        // floating point: the query [1,1] has identical cosine to both.
        let model = ClusterModel {
            centroids: Array::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]),
            labels: vec![WordClass::Function, WordClass::Content],
            seed: 0,
            words: vec![],
            wcss: vec![],
        };
        let embed = |_w: &str| Ok(Array::from_vec(&[2], vec![1.0, 1.0]));
        assert_eq!(classify("anything", &model, embed).unwrap(), model.labels[0]);
    }
}
