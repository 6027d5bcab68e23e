//! AR(1) discretization and Gauss-Hermite quadrature.

use crate::error::{Error, Result};

/// Finite Markov chain approximating `zeta' = rho * zeta + eps`,
/// `eps ~ N(0, sigma_eps^2)`, by the Rouwenhorst construction.
///
/// The chain's stationary variance matches `sigma_eps^2 / (1 - rho^2)`
/// exactly. Nodes are equally spaced on `[-psi, psi]` with
/// `psi = sigma_stat * sqrt(n - 1)`; rows of the returned transition matrix
/// sum to one.
pub fn discretize_ar1(rho: f64, sigma_eps: f64, n_nodes: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if n_nodes == 0 {
        return Err(Error::Domain("discretize_ar1: n_nodes must be at least 1".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("discretize_ar1: |rho| must be < 1, got {rho}")));
    }
    if sigma_eps < 0.0 {
        return Err(Error::Domain(format!(
            "discretize_ar1: sigma_eps must be nonnegative, got {sigma_eps}"
        )));
    }
    if n_nodes == 1 {
        return Ok((vec![0.0], vec![vec![1.0]]));
    }

    let sigma_stat = sigma_eps / (1.0 - rho * rho).sqrt();
    let psi = sigma_stat * ((n_nodes - 1) as f64).sqrt();
    let step = 2.0 * psi / (n_nodes - 1) as f64;
    let nodes: Vec<f64> = (0..n_nodes).map(|i| -psi + step * i as f64).collect();

    let p = (1.0 + rho) / 2.0;
    // Recursive build: start from the 2-state chain, expand one state at a time.
    let mut trans = vec![vec![p, 1.0 - p], vec![1.0 - p, p]];
    for m in 3..=n_nodes {
        let mut next = vec![vec![0.0; m]; m];
        for i in 0..m - 1 {
            for j in 0..m - 1 {
                let t = trans[i][j];
                next[i][j] += p * t;
                next[i][j + 1] += (1.0 - p) * t;
                next[i + 1][j] += (1.0 - p) * t;
                next[i + 1][j + 1] += p * t;
            }
        }
        // Interior rows were double-counted.
        for row in next.iter_mut().take(m - 1).skip(1) {
            for v in row.iter_mut() {
                *v *= 0.5;
            }
        }
        trans = next;
    }
    Ok((nodes, trans))
}

/// Stationary distribution of a Rouwenhorst chain: Binomial(n-1, 1/2).
pub fn rouwenhorst_stationary(n_nodes: usize) -> Vec<f64> {
    let n = n_nodes - 1;
    let mut probs = vec![0.0; n_nodes];
    let mut c = 1.0f64;
    for (k, p) in probs.iter_mut().enumerate() {
        *p = c * 0.5f64.powi(n as i32);
        c = c * (n - k) as f64 / (k + 1) as f64;
    }
    probs
}

/// Gauss-Hermite nodes and weights for `E[f(X)]`, `X ~ N(0, 1)`.
///
/// Returns probabilist-scaled nodes (`sqrt(2) * x_i`) and weights that sum
/// to one, so `E[f(X)] ~ sum_i w_i f(node_i)`.
pub fn gauss_hermite_normal(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Domain("gauss_hermite_normal: n must be at least 1".into()));
    }
    let (x, w) = gauss_hermite_physicists(n);
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let nodes = x.iter().map(|v| std::f64::consts::SQRT_2 * v).collect();
    let weights = w.iter().map(|v| v / sqrt_pi).collect();
    Ok((nodes, weights))
}

/// Classic Newton iteration on the physicists' Hermite polynomials
/// (weight `exp(-x^2)`), good to near machine precision for n <= 64.
fn gauss_hermite_physicists(n: usize) -> (Vec<f64>, Vec<f64>) {
    const EPS: f64 = 3e-14;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        // Initial guesses for the i-th largest root.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            // Evaluate H_n via the orthonormal recurrence.
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[m - 1] = 0.0;
        x[n / 2] = 0.0;
    }
    // Sort ascending for a stable public ordering.
    let mut pairs: Vec<(f64, f64)> = x.into_iter().zip(w).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn stationary_by_power_iteration(trans: &[Vec<f64>]) -> Vec<f64> {
        let n = trans.len();
        let mut pi = vec![1.0 / n as f64; n];
        for _ in 0..20_000 {
            let mut next = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    next[j] += pi[i] * trans[i][j];
                }
            }
            pi = next;
        }
        pi
    }

    #[test]
    fn degenerate_cases() {
        let (nodes, trans) = discretize_ar1(0.0, 1.0, 1).unwrap();
        assert_eq!(nodes, vec![0.0]);
        assert_eq!(trans, vec![vec![1.0]]);

        let (nodes, trans) = discretize_ar1(0.5, 0.0, 5).unwrap();
        assert!(nodes.iter().all(|&v| v == 0.0));
        for row in &trans {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        }
        assert!(discretize_ar1(0.5, 1.0, 0).is_err());
        assert!(discretize_ar1(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn stationary_variance_is_exact() {
        // rho = 0.9, sigma_eps = 1: stationary variance 1/(1-0.81) = 5.263...
        let (nodes, trans) = discretize_ar1(0.9, 1.0, 9).unwrap();
        for row in &trans {
            assert_relative_eq!(row.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        }
        let pi = stationary_by_power_iteration(&trans);
        let mean: f64 = pi.iter().zip(&nodes).map(|(p, x)| p * x).sum();
        let var: f64 = pi.iter().zip(&nodes).map(|(p, x)| p * (x - mean) * (x - mean)).sum();
        assert_relative_eq!(var, 1.0 / (1.0 - 0.81), max_relative = 1e-9);
        // Closed-form stationary matches power iteration.
        let binom = rouwenhorst_stationary(9);
        for (a, b) in binom.iter().zip(&pi) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn gauss_hermite_five_point_reference() {
        let (nodes, weights) = gauss_hermite_normal(5).unwrap();
        assert_relative_eq!(weights.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        // Known physicists' nodes scaled by sqrt(2).
        let expected = [-2.0201828704560856, -0.9585724646138185, 0.0];
        for (i, e) in expected.iter().enumerate() {
            assert_relative_eq!(nodes[i], std::f64::consts::SQRT_2 * e, epsilon = 1e-10);
        }
        // Exact moments of a standard normal up to order 9.
        let m2: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x * x).sum();
        let m4: f64 = nodes.iter().zip(&weights).map(|(x, w)| w * x.powi(4)).sum();
        assert_relative_eq!(m2, 1.0, max_relative = 1e-10);
        assert_relative_eq!(m4, 3.0, max_relative = 1e-10);
    }

    #[test]
    fn gauss_hermite_single_node() {
        let (nodes, weights) = gauss_hermite_normal(1).unwrap();
        assert_relative_eq!(nodes[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(weights[0], 1.0, max_relative = 1e-12);
    }
}
