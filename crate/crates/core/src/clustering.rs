//! Curve grouping: K-means on predicted warp coefficients and a
//! mixture-of-template-curves EM baseline on the raw observations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::splines::BasisSpec;

/// Outcome of a clustering run. K-means fills `inertia`; the mixture EM
/// fills the likelihood fields and the mixing weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<usize>,
    /// Cluster centers: coefficient vectors in the clustered space.
    pub centers: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_likelihood_path: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixing: Option<Vec<f64>>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// K-means++ seeding followed by Lloyd iterations, best of `restarts` runs
/// by inertia. Deterministic under the seed.
pub fn kmeans_warps(
    coeffs: &[Vec<f64>],
    num_clusters: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterResult> {
    let n = coeffs.len();
    if num_clusters == 0 || num_clusters > n {
        return Err(Error::InvalidClustering {
            reason: format!("{num_clusters} clusters requested for {n} points"),
        });
    }
    let dim = coeffs[0].len();
    if coeffs.iter().any(|c| c.len() != dim) {
        return Err(Error::InvalidClustering {
            reason: "coefficient vectors have unequal lengths".into(),
        });
    }
    if coeffs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidClustering {
            reason: "coefficient vectors must be finite".into(),
        });
    }

    let mut best: Option<(f64, Vec<usize>, Vec<Vec<f64>>)> = None;
    for restart in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let (inertia, labels, centers) = lloyd_run(coeffs, num_clusters, &mut rng);
        if best.as_ref().map_or(true, |(b, _, _)| inertia < *b) {
            best = Some((inertia, labels, centers));
        }
    }
    let (inertia, labels, centers) = best.expect("at least one restart");
    Ok(ClusterResult {
        labels,
        centers,
        inertia: Some(inertia),
        log_likelihood: None,
        log_likelihood_path: Vec::new(),
        mixing: None,
    })
}

fn lloyd_run(
    coeffs: &[Vec<f64>],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, Vec<usize>, Vec<Vec<f64>>) {
    let n = coeffs.len();
    // K-means++: spread the initial centers proportionally to squared
    // distance from the ones already chosen.
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(coeffs[rng.gen_range(0..n)].clone());
    let mut dist2: Vec<f64> = coeffs
        .iter()
        .map(|c| squared_distance(c, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in dist2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(coeffs[next].clone());
        for (d, c) in dist2.iter_mut().zip(coeffs.iter()) {
            *d = d.min(squared_distance(c, centers.last().unwrap()));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, c) in coeffs.iter().enumerate() {
            let mut arg = 0;
            let mut best = f64::INFINITY;
            for (j, center) in centers.iter().enumerate() {
                let d = squared_distance(c, center);
                if d < best {
                    best = d;
                    arg = j;
                }
            }
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (j, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = coeffs
                .iter()
                .zip(labels.iter())
                .filter(|(_, l)| **l == j)
                .map(|(c, _)| c)
                .collect();
            if members.is_empty() {
                continue; // keep the previous center
            }
            for (d, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let inertia = coeffs
        .iter()
        .zip(labels.iter())
        .map(|(c, l)| squared_distance(c, &centers[*l]))
        .sum();
    (inertia, labels, centers)
}

/// Mixture-of-template-curves EM: each curve belongs to one of
/// `num_components` spline templates observed with common white noise.
/// Stops when the observed log-likelihood improves by less than `tol`.
pub fn mixture_em(
    dataset: &Dataset,
    num_components: usize,
    basis: &BasisSpec,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<ClusterResult> {
    let n = dataset.num_curves();
    let kf = basis.num_basis();
    if num_components == 0 || num_components > n {
        return Err(Error::InvalidClustering {
            reason: format!("{num_components} components requested for {n} curves"),
        });
    }
    if dataset.n_tot() <= num_components * kf {
        return Err(Error::InvalidClustering {
            reason: format!(
                "{} observations cannot identify {num_components} templates of {kf} coefficients",
                dataset.n_tot()
            ),
        });
    }

    // Per-curve design matrices and their fixed cross products.
    let designs: Vec<DMatrix<f64>> = dataset
        .curves()
        .iter()
        .map(|c| basis.evaluate(c.ts()))
        .collect::<Result<_>>()?;
    let gram_i: Vec<DMatrix<f64>> = designs.iter().map(|x| x.transpose() * x).collect();
    let xty_i: Vec<DVector<f64>> = designs
        .iter()
        .zip(dataset.curves())
        .map(|(x, c)| x.transpose() * DVector::from_column_slice(c.ys()))
        .collect();

    let ridge_solve = |gram: &DMatrix<f64>, rhs: &DVector<f64>| -> Result<DVector<f64>> {
        match nalgebra::Cholesky::new(gram.clone()) {
            Some(c) => Ok(c.solve(rhs)),
            None => {
                let ridge = 1e-8 * gram.trace().max(1e-12) / kf as f64;
                nalgebra::Cholesky::new(gram + DMatrix::identity(kf, kf) * ridge)
                    .map(|c| c.solve(rhs))
                    .ok_or(Error::Singular {
                        context: "mixture template regression".into(),
                    })
            }
        }
    };

    // Initialize templates from randomly chosen distinct curves and the
    // noise variance from the pooled fit.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = (0..n).collect();
    for i in 0..num_components {
        let j = rng.gen_range(i..n);
        picks.swap(i, j);
    }
    let mut templates: Vec<DVector<f64>> = picks[..num_components]
        .iter()
        .map(|&i| ridge_solve(&gram_i[i], &xty_i[i]))
        .collect::<Result<_>>()?;
    let mut mixing = vec![1.0 / num_components as f64; num_components];
    let pooled_gram: DMatrix<f64> = gram_i.iter().sum();
    let pooled_xty: DVector<f64> = xty_i.iter().sum();
    let pooled = ridge_solve(&pooled_gram, &pooled_xty)?;
    let mut noise_var = residual_ss(dataset, &designs, &pooled) / dataset.n_tot() as f64;
    noise_var = noise_var.max(1e-12);

    let n_tot = dataset.n_tot() as f64;
    let mut resp = DMatrix::zeros(n, num_components);
    let mut ll_path: Vec<f64> = Vec::new();
    let mut labels = vec![0usize; n];

    for _ in 0..max_iters.max(1) {
        // E-step in log space.
        let mut ll = 0.0;
        for (i, curve) in dataset.curves().iter().enumerate() {
            let n_i = curve.len() as f64;
            let norm = -0.5 * n_i * (2.0 * std::f64::consts::PI * noise_var).ln();
            let mut log_terms = Vec::with_capacity(num_components);
            for (k, template) in templates.iter().enumerate() {
                let fitted = &designs[i] * template;
                let rss: f64 = curve
                    .ys()
                    .iter()
                    .zip(fitted.iter())
                    .map(|(y, f)| (y - f) * (y - f))
                    .sum();
                log_terms.push(mixing[k].ln() + norm - 0.5 * rss / noise_var);
            }
            let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = log_terms.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum_exp.ln();
            ll += lse;
            for (k, v) in log_terms.iter().enumerate() {
                resp[(i, k)] = (v - lse).exp();
            }
        }
        ll_path.push(ll);

        for (i, row_label) in labels.iter_mut().enumerate() {
            let mut arg = 0;
            let mut best = f64::NEG_INFINITY;
            for k in 0..num_components {
                if resp[(i, k)] > best {
                    best = resp[(i, k)];
                    arg = k;
                }
            }
            *row_label = arg;
        }

        if ll_path.len() >= 2 {
            let prev = ll_path[ll_path.len() - 2];
            if ll - prev < tol {
                break;
            }
        }

        // M-step: responsibility-weighted template regressions, then the
        // mixing weights and the common noise variance.
        for k in 0..num_components {
            let mass: f64 = (0..n).map(|i| resp[(i, k)]).sum();
            if mass < 1e-8 {
                // Re-seed a starved component from the worst-fit curve.
                let worst = (0..n)
                    .min_by(|&a, &b| {
                        let fa = component_fit(&designs[a], &templates, &resp, a);
                        let fb = component_fit(&designs[b], &templates, &resp, b);
                        fa.partial_cmp(&fb).unwrap()
                    })
                    .unwrap_or(0);
                log::warn!("mixture component {k} starved; re-seeding from curve {worst}");
                templates[k] = ridge_solve(&gram_i[worst], &xty_i[worst])?;
                mixing[k] = 1.0 / n as f64;
                let total: f64 = mixing.iter().sum();
                for p in &mut mixing {
                    *p /= total;
                }
                continue;
            }
            let mut gram = DMatrix::zeros(kf, kf);
            let mut rhs = DVector::zeros(kf);
            for i in 0..n {
                let r = resp[(i, k)];
                if r > 0.0 {
                    gram += &gram_i[i] * r;
                    rhs += &xty_i[i] * r;
                }
            }
            templates[k] = ridge_solve(&gram, &rhs)?;
            mixing[k] = mass / n as f64;
        }
        let mut rss = 0.0;
        for (i, curve) in dataset.curves().iter().enumerate() {
            for (k, template) in templates.iter().enumerate() {
                let r = resp[(i, k)];
                if r > 0.0 {
                    let fitted = &designs[i] * template;
                    rss += r * curve
                        .ys()
                        .iter()
                        .zip(fitted.iter())
                        .map(|(y, f)| (y - f) * (y - f))
                        .sum::<f64>();
                }
            }
        }
        noise_var = (rss / n_tot).max(1e-12);
    }

    Ok(ClusterResult {
        labels,
        centers: templates
            .iter()
            .map(|t| t.iter().copied().collect())
            .collect(),
        inertia: None,
        log_likelihood: ll_path.last().copied(),
        log_likelihood_path: ll_path,
        mixing: Some(mixing),
    })
}

fn residual_ss(dataset: &Dataset, designs: &[DMatrix<f64>], coeffs: &DVector<f64>) -> f64 {
    dataset
        .curves()
        .iter()
        .zip(designs.iter())
        .map(|(c, x)| {
            let fitted = x * coeffs;
            c.ys()
                .iter()
                .zip(fitted.iter())
                .map(|(y, f)| (y - f) * (y - f))
                .sum::<f64>()
        })
        .sum()
}

fn component_fit(
    design: &DMatrix<f64>,
    templates: &[DVector<f64>],
    resp: &DMatrix<f64>,
    i: usize,
) -> f64 {
    // Responsibility-weighted fit quality proxy; lower is worse.
    templates
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let fitted = design * t;
            -resp[(i, k)] * fitted.iter().map(|f| f * f).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (x, y) in a.iter().zip(b.iter()) {
        table[*x][*y] += 1;
    }
    let choose2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_a: f64 = table
        .iter()
        .map(|row| choose2(row.iter().sum::<u64>()))
        .sum();
    let sum_b: f64 = (0..kb)
        .map(|j| choose2(table.iter().map(|row| row[j]).sum::<u64>()))
        .sum();
    let total = choose2(n as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        return 1.0;
    }
    (sum_ij - expected) / (max_index - expected)
}
