//! Gauss-Hermite quadrature nodes and weights (physicists' convention,
//! weight function exp(-x^2)).
//!
//! Roots of H_n are found by Newton iteration on the orthonormal Hermite
//! recurrence with the classical asymptotic initial guesses; weights come
//! from the derivative at each root. Nodes are returned in ascending order.

/// One quadrature rule: `sum(w_k * f(z_k))` approximates the integral of
/// `exp(-x^2) f(x)` over the real line, exactly for polynomials up to
/// degree 2n-1.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        let mut z = 0.0f64;
        let mut pp = 0.0f64;

        for i in 0..m {
            // asymptotic initial guesses for the i-th largest root
            z = match i {
                0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * (n as f64).powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            for _ in 0..100 {
                // orthonormal Hermite recurrence
                let mut p1 = std::f64::consts::PI.powf(-0.25);
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / j as f64).sqrt() * p2 - ((j as f64 - 1.0) / j as f64).sqrt() * p3;
                }
                pp = (2.0 * n as f64).sqrt() * p2;
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() <= 1e-15 * (1.0 + z.abs()) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // stored largest-first above; flip to ascending
        nodes.reverse();
        weights.reverse();
        GaussHermite { nodes, weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // Reference values from standard Gauss-Hermite tables.
    const NODES_10: [f64; 10] = [
        -3.4361591188377374,
        -2.5327316742327897,
        -1.7566836492998816,
        -1.0366108297895136,
        -0.3429013272237046,
        0.3429013272237046,
        1.0366108297895136,
        1.7566836492998816,
        2.5327316742327897,
        3.4361591188377374,
    ];
    const WEIGHTS_10: [f64; 10] = [
        7.6404328552326410e-06,
        1.3436457467812324e-03,
        3.3874394455481106e-02,
        2.4013861108231471e-01,
        6.1086263373532579e-01,
        6.1086263373532579e-01,
        2.4013861108231471e-01,
        3.3874394455481106e-02,
        1.3436457467812324e-03,
        7.6404328552326410e-06,
    ];

    #[test]
    fn ten_point_rule_matches_reference() {
        let rule = GaussHermite::new(10);
        for (computed, expected) in rule.nodes.iter().zip(NODES_10.iter()) {
            assert_abs_diff_eq!(computed, expected, epsilon = 1e-12);
        }
        for (computed, expected) in rule.weights.iter().zip(WEIGHTS_10.iter()) {
            assert_abs_diff_eq!(computed, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn five_point_rule_matches_reference() {
        let rule = GaussHermite::new(5);
        let nodes = [
            -2.0201828704560856,
            -0.9585724646138185,
            0.0,
            0.9585724646138185,
            2.0201828704560856,
        ];
        let weights = [
            0.01995324205904592,
            0.3936193231522411,
            0.9453087204829418,
            0.3936193231522411,
            0.01995324205904592,
        ];
        for (c, e) in rule.nodes.iter().zip(nodes.iter()) {
            assert_abs_diff_eq!(c, e, epsilon = 1e-13);
        }
        for (c, e) in rule.weights.iter().zip(weights.iter()) {
            assert_abs_diff_eq!(c, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn moments_of_exp_weight_are_exact() {
        let sqrt_pi = std::f64::consts::PI.sqrt();
        for n in [1usize, 2, 3, 7, 10, 15, 20, 31] {
            let rule = GaussHermite::new(n);
            let m0: f64 = rule.weights.iter().sum();
            assert_abs_diff_eq!(m0, sqrt_pi, epsilon = 1e-12);
            if n >= 2 {
                let m2: f64 = rule
                    .weights
                    .iter()
                    .zip(&rule.nodes)
                    .map(|(w, z)| w * z * z)
                    .sum();
                assert_abs_diff_eq!(m2, sqrt_pi / 2.0, epsilon = 1e-11);
            }
            if n >= 3 {
                let m4: f64 = rule
                    .weights
                    .iter()
                    .zip(&rule.nodes)
                    .map(|(w, z)| w * z.powi(4))
                    .sum();
                assert_abs_diff_eq!(m4, 0.75 * sqrt_pi, epsilon = 1e-10);
            }
        }
    }
}
