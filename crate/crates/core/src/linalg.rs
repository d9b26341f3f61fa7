//! Small dense solvers: Gaussian elimination and least squares on the
//! probability simplex.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |a, (&m, &v)| a + m * v)
            })
            .collect()
    }
}

/// Solves `A x = b` by elimination with partial pivoting.
pub fn solve<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.size();
    if b.len() != n {
        return Err(Error::Dimension("right-hand side length".into()));
    }
    let mut m = a.data.clone();
    let mut x = b.to_vec();
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = scale * T::epsilon() * T::lit(16.0);
    for col in 0..n {
        let (piv, best) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, T::neg_infinity()), |acc, c| if c.1 > acc.1 { c } else { acc });
        if !(best > tiny) {
            return Err(Error::Degenerate(format!("singular system at column {col}")));
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            x.swap(piv, col);
        }
        let p = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[r * n + k] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Ok(x)
}

/// Minimises `½ αᵀGα − bᵀα` over the probability simplex by a primal
/// active-set method. A relative ridge of `1e-12` keeps duplicate columns
/// solvable.
pub fn simplex_least_squares<T: Real>(g: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = g.size();
    if n == 0 || b.len() != n {
        return Err(Error::Dimension(
            "simplex least squares needs a nonempty square system".into(),
        ));
    }
    let trace = (0..n).fold(T::zero(), |a, i| a + g.get(i, i).abs());
    let ridge = T::lit(1e-12) * (trace / T::from_usize_lossy(n)).max(T::min_positive_value());
    let q = |i: usize, j: usize| g.get(i, j) + if i == j { ridge } else { T::zero() };
    let tol = T::lit(1e-12);

    // start at the best vertex
    let start = (0..n)
        .map(|i| (i, T::lit(0.5) * q(i, i) - b[i]))
        .fold((0, T::infinity()), |acc, c| if c.1 < acc.1 { c } else { acc })
        .0;
    let mut alpha = vec![T::zero(); n];
    alpha[start] = T::one();
    let mut free = vec![start];

    for _ in 0..(50 * n + 100) {
        // equality-constrained minimiser over the free set
        let k = free.len();
        let kkt = Matrix::from_fn(k + 1, |i, j| match (i < k, j < k) {
            (true, true) => q(free[i], free[j]),
            (false, false) => T::zero(),
            _ => T::one(),
        });
        let mut rhs: Vec<T> = free.iter().map(|&i| b[i]).collect();
        rhs.push(T::one());
        let z = solve(&kkt, &rhs)?;

        if z[..k].iter().all(|&v| v >= T::zero()) {
            for (idx, &i) in free.iter().enumerate() {
                alpha[i] = z[idx];
            }
            // multipliers of the bound constraints: μ = Gα − b − ν 1
            let grad: Vec<T> = (0..n)
                .map(|i| (0..n).fold(T::zero(), |a, j| a + q(i, j) * alpha[j]) - b[i])
                .collect();
            let nu = free.iter().fold(T::zero(), |a, &i| a + grad[i]) / T::from_usize_lossy(k);
            let scale = grad.iter().fold(T::one(), |a, v| a.max(v.abs()));
            let entering = (0..n).filter(|i| !free.contains(i)).map(|i| (i, grad[i] - nu)).fold(
                None,
                |acc: Option<(usize, T)>, c| match acc {
                    Some(a) if a.1 <= c.1 => Some(a),
                    _ => Some(c),
                },
            );
            match entering {
                Some((i, mu)) if mu < -tol * scale => free.push(i),
                _ => return Ok(normalise(alpha)),
            }
        } else {
            // walk toward z until a weight hits zero
            let mut t = T::one();
            for (idx, &i) in free.iter().enumerate() {
                if z[idx] < T::zero() {
                    let denom = alpha[i] - z[idx];
                    if denom > T::zero() {
                        t = t.min(alpha[i] / denom);
                    }
                }
            }
            for (idx, &i) in free.iter().enumerate() {
                alpha[i] = alpha[i] + t * (z[idx] - alpha[i]);
            }
            free.retain(|&i| {
                if alpha[i] <= tol {
                    alpha[i] = T::zero();
                    false
                } else {
                    true
                }
            });
            if free.is_empty() {
                let i = (0..n)
                    .fold((0, T::neg_infinity()), |acc, i| {
                        if alpha[i] > acc.1 {
                            (i, alpha[i])
                        } else {
                            acc
                        }
                    })
                    .0;
                alpha = vec![T::zero(); n];
                alpha[i] = T::one();
                free.push(i);
            }
        }
    }
    Err(Error::Convergence {
        stage: "simplex_least_squares".into(),
        detail: "active set did not settle".into(),
        best: f64::NAN,
    })
}

fn normalise<T: Real>(mut alpha: Vec<T>) -> Vec<T> {
    for a in alpha.iter_mut() {
        if *a < T::zero() {
            *a = T::zero();
        }
    }
    let s: T = alpha.iter().copied().sum();
    for a in alpha.iter_mut() {
        *a /= s;
    }
    alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn solves_with_pivoting() {
        let a = Matrix::from_fn(2, |i, j| [[0.0f64, 1.0], [2.0, 3.0]][i][j]);
        let x = solve(&a, &[1.0, 8.0]).unwrap();
        assert!((x[0] - 2.5).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
        let s = Matrix::from_fn(2, |_, _| 1.0);
        assert!(solve(&s, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn interior_solution() {
        // min ½|α - c|² with c on the simplex returns c
        let g = Matrix::from_fn(3, |i, j| if i == j { 1.0f64 } else { 0.0 });
        let a = simplex_least_squares(&g, &[0.2, 0.3, 0.5]).unwrap();
        for (x, y) in a.iter().zip([0.2, 0.3, 0.5]) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn projects_outside_point() {
        // projection of (1, 1, -1) onto the simplex is (1/2, 1/2, 0)
        let g = Matrix::from_fn(3, |i, j| if i == j { 1.0f64 } else { 0.0 });
        let a = simplex_least_squares(&g, &[1.0, 1.0, -1.0]).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-9 && (a[1] - 0.5).abs() < 1e-9 && a[2] == 0.0);
    }

    #[test]
    fn duplicate_columns_are_tolerated() {
        let g = Matrix::from_fn(3, |_, _| 1.0);
        let a = simplex_least_squares(&g, &[1.0, 1.0, 1.0]).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn result_is_on_simplex_and_beats_vertices(seed in 0u64..500) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let n = 2 + (seed % 6) as usize;
            let m = 8;
            let cols: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect();
            let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            let g = Matrix::from_fn(n, |i, j| cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum());
            let b: Vec<f64> = cols.iter().map(|c| c.iter().zip(&y).map(|(a, b)| a * b).sum()).collect();
            let a = simplex_least_squares(&g, &b).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.iter().all(|&v| v >= 0.0));
            let obj = |w: &[f64]| 0.5 * w.iter().zip(g.mul_vec(w)).map(|(x, y)| x * y).sum::<f64>()
                - w.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>();
            let best = obj(&a);
            for i in 0..n {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                prop_assert!(best <= obj(&e) + 1e-9);
            }
        }
    }
}
