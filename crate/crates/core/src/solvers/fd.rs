//! Finite-difference stencil weights from the discrete moment conditions.
//!
//! With grid offsets `o_j` (in units of `dx`) and `dx_j = x_i - x_j = -o_j dx`,
//! an order-`r` approximation of the `l`-th derivative needs
//! `sum_j xi_j (dx_j)^k = 0` for `0 <= k <= l+r-1, k != l` and
//! `(-1)^k k!` for `k = l`. Offsets are integers, so the weights are solved
//! exactly over the rationals and converted to `f64` at the end.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{invalid, Error, Result};
use crate::grid::wrap;

#[derive(Debug, Clone, PartialEq)]
pub struct FdStencil {
    offsets: Vec<i64>,
    /// Weights for unit spacing; divide by `dx^l` for spacing `dx`.
    weights: Vec<f64>,
    exact: Vec<BigRational>,
    derivative_order: usize,
    accuracy_order: usize,
}

impl FdStencil {
    pub fn offsets(&self) -> &[i64] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exact_weights(&self) -> &[BigRational] {
        &self.exact
    }

    pub fn derivative_order(&self) -> usize {
        self.derivative_order
    }

    pub fn accuracy_order(&self) -> usize {
        self.accuracy_order
    }

    /// `coef * xi_j / dx^l`.
    pub fn scaled_weights(&self, dx: f64, coef: f64) -> Vec<f64> {
        let s = coef / dx.powi(self.derivative_order as i32);
        self.weights.iter().map(|w| w * s).collect()
    }

    /// Applies the stencil to a periodic field with spacing `dx`.
    pub fn apply(&self, field: &[f64], dx: f64) -> Vec<f64> {
        apply_weights(&self.offsets, &self.scaled_weights(dx, 1.0), field)
    }

    /// Relative residual of each moment condition `k = 0 ..= l+r-1`,
    /// evaluated in floating point with `dx_j = -o_j`.
    pub fn moment_residuals(&self) -> Vec<f64> {
        let l = self.derivative_order;
        (0..self.derivative_order + self.accuracy_order)
            .map(|k| {
                let terms: Vec<f64> = self
                    .offsets
                    .iter()
                    .zip(&self.weights)
                    .map(|(&o, &w)| w * (-(o as f64)).powi(k as i32))
                    .collect();
                let sum: f64 = terms.iter().sum();
                let target = if k == l {
                    let fact: f64 = (1..=k).map(|v| v as f64).product();
                    if k % 2 == 0 { fact } else { -fact }
                } else {
                    0.0
                };
                let scale = terms.iter().map(|t| t.abs()).sum::<f64>().max(target.abs()).max(1.0);
                (sum - target).abs() / scale
            })
            .collect()
    }
}

/// `out_i = sum_j w_j u_{i + o_j}`, accumulated in offset order from zero.
pub fn apply_weights(offsets: &[i64], weights: &[f64], field: &[f64]) -> Vec<f64> {
    let n = field.len();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (&o, &w) in offsets.iter().zip(weights) {
                acc += w * field[wrap(i, o as isize, n)];
            }
            acc
        })
        .collect()
}

pub fn fd_weights(l: usize, r: usize, offsets: &[i64]) -> Result<FdStencil> {
    let n = offsets.len();
    if r == 0 {
        return invalid("accuracy order must be positive");
    }
    if n == 0 || n + 1 < l + r || n <= l {
        return invalid(format!(
            "{n} offsets cannot give an order-{r} approximation of derivative {l}"
        ));
    }
    for (a, &oa) in offsets.iter().enumerate() {
        if offsets[..a].contains(&oa) {
            return Err(Error::Numerical(format!(
                "singular moment system: offset {oa} repeated"
            )));
        }
    }
    let big = |v: i64| BigRational::from_integer(BigInt::from(v));
    let dxj: Vec<BigRational> = offsets.iter().map(|&o| big(-o)).collect();
    let pow = |x: &BigRational, k: usize| -> BigRational {
        let mut p = BigRational::one();
        for _ in 0..k {
            p *= x;
        }
        p
    };
    let target = |k: usize| -> BigRational {
        if k != l {
            return BigRational::zero();
        }
        let mut f = BigRational::one();
        for v in 1..=k {
            f *= big(v as i64);
        }
        if k % 2 == 1 {
            -f
        } else {
            f
        }
    };

    // Square Vandermonde system on conditions k = 0..n-1.
    let mut a: Vec<Vec<BigRational>> = (0..n)
        .map(|k| {
            let mut row: Vec<BigRational> = dxj.iter().map(|x| pow(x, k)).collect();
            row.push(target(k));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .ok_or_else(|| Error::Numerical("singular moment system".into()))?;
        a.swap(col, piv);
        let p = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v /= p.clone();
        }
        for row in 0..n {
            if row != col && !a[row][col].is_zero() {
                let factor = a[row][col].clone();
                for c in col..=n {
                    let d = a[col][c].clone() * factor.clone();
                    a[row][c] -= d;
                }
            }
        }
    }
    let exact: Vec<BigRational> = a.into_iter().map(|row| row[n].clone()).collect();

    // Conditions beyond the square system must hold for the requested order.
    for k in n..l + r {
        let s: BigRational = exact
            .iter()
            .zip(&dxj)
            .map(|(w, x)| w.clone() * pow(x, k))
            .fold(BigRational::zero(), |acc, t| acc + t);
        if s != target(k) {
            return invalid(format!(
                "offsets {offsets:?} violate moment condition k = {k} needed for order {r}"
            ));
        }
    }
    let weights = exact
        .iter()
        .map(|w| {
            let (num, den) = (w.numer().to_f64(), w.denom().to_f64());
            match (num, den) {
                (Some(a), Some(b)) if w.abs() < BigRational::from_integer(BigInt::from(1_i64 << 52)) => Ok(a / b),
                _ => Err(Error::Numerical("stencil weight not representable".into())),
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(FdStencil {
        offsets: offsets.to_vec(),
        weights,
        exact,
        derivative_order: l,
        accuracy_order: r,
    })
}

/// Smallest symmetric stencil `-m..=m` that reaches order `r` for derivative `l`.
pub fn centered_offsets(l: usize, r: usize) -> Vec<i64> {
    let need = (l + r).saturating_sub(1).max(l + 1);
    let m = need / 2;
    (-(m as i64)..=m as i64).collect()
}

/// Centered stencil for derivative `l` at order `r`.
pub fn centered(l: usize, r: usize) -> Result<FdStencil> {
    let mut m = centered_offsets(l, r).len() / 2;
    loop {
        let offs: Vec<i64> = (-(m as i64)..=m as i64).collect();
        match fd_weights(l, r, &offs) {
            Ok(s) => return Ok(s),
            Err(Error::InvalidArgument(_)) if m < 16 => m += 1,
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn classical_first_and_second_derivative() {
        let s = fd_weights(1, 2, &[-1, 0, 1]).unwrap();
        assert_eq!(s.exact_weights(), &[rat(-1, 2), rat(0, 1), rat(1, 2)]);
        assert_eq!(s.weights(), &[-0.5, 0.0, 0.5]);
        let s = fd_weights(2, 2, &[-1, 0, 1]).unwrap();
        assert_eq!(s.weights(), &[1.0, -2.0, 1.0]);
        let s = fd_weights(0, 1, &[0]).unwrap();
        assert_eq!(s.weights(), &[1.0]);
    }

    #[test]
    fn scaled_by_spacing() {
        let s = fd_weights(1, 2, &[-1, 0, 1]).unwrap();
        assert_eq!(s.scaled_weights(0.1, 1.0), vec![-5.0, 0.0, 5.0]);
    }

    /// Fornberg's recursion in floating point as an independent route.
    fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<f64> {
        let n = x.len() - 1;
        let mut c = vec![vec![0.0; m + 1]; n + 1];
        let (mut c1, mut c4) = (1.0, x[0] - z);
        c[0][0] = 1.0;
        for i in 1..=n {
            let mn = i.min(m);
            let mut c2 = 1.0;
            let c5 = c4;
            c4 = x[i] - z;
            for j in 0..i {
                let c3 = x[i] - x[j];
                c2 *= c3;
                if j == i - 1 {
                    for k in (1..=mn).rev() {
                        c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                    }
                    c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
                }
                for k in (1..=mn).rev() {
                    c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
                }
                c[j][0] = c4 * c[j][0] / c3;
            }
            c1 = c2;
        }
        c.iter().map(|row| row[m]).collect()
    }

    #[test]
    fn agrees_with_fornberg() {
        for l in 0..=3 {
            for offs in [vec![-2i64, -1, 0, 1, 2], vec![-3, -2, -1, 0, 1, 2, 3], vec![-1, 0, 1, 2, 3]] {
                let s = fd_weights(l, offs.len() - l, &offs).unwrap();
                let xs: Vec<f64> = offs.iter().map(|&o| o as f64).collect();
                let f = fornberg(0.0, &xs, l);
                for (a, b) in s.weights().iter().zip(&f) {
                    assert!((a - b).abs() < 1e-12, "l={l} {offs:?}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn moment_conditions_hold() {
        for l in 0..=3 {
            for r in 1..=4 {
                let s = centered(l, r).unwrap();
                for (k, res) in s.moment_residuals().iter().enumerate() {
                    assert!(*res < 1e-10, "l={l} r={r} k={k}: {res}");
                }
            }
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(fd_weights(1, 2, &[-1, 0, 0]), Err(Error::Numerical(_))));
        assert!(matches!(fd_weights(2, 3, &[-1, 0, 1]), Err(Error::InvalidArgument(_))));
        assert!(matches!(fd_weights(1, 2, &[0]), Err(Error::InvalidArgument(_))));
        // one-sided two-point stencil is only first order
        assert!(fd_weights(1, 2, &[0, 1]).is_err());
        assert!(fd_weights(1, 1, &[0, 1]).is_ok());
    }

    #[test]
    fn second_derivative_of_quadratic_is_exact() {
        let n = 16;
        let dx = 0.1;
        let s = fd_weights(2, 2, &[-1, 0, 1]).unwrap();
        let f: Vec<f64> = (0..n).map(|i| 3.0 * (i as f64 * dx).powi(2)).collect();
        let d = s.apply(&f, dx);
        for v in &d[1..n - 1] {
            assert!((v - 6.0).abs() < 1e-9);
        }
    }
}
