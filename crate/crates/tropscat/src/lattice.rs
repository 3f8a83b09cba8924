//! Small exact linear algebra over `i64` lattices and rational vector spaces.

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};

pub type Q = BigRational;

/// Dense integer matrix, row major.
pub type IMat = Vec<Vec<i64>>;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Product that skips the gcd normalisation when both factors are integers.
pub fn qmul(a: &Q, b: &Q) -> Q {
    if a.is_integer() && b.is_integer() {
        Q::from_integer(a.numer() * b.numer())
    } else {
        a * b
    }
}

/// In-place sum, integer fast path as in [`qmul`].
pub fn qadd_assign(a: &mut Q, b: &Q) {
    if a.is_integer() && b.is_integer() {
        *a = Q::from_integer(a.numer() + b.numer());
    } else {
        *a += b;
    }
}

pub fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

pub fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &[i64], s: i64) -> Vec<i64> {
    a.iter().map(|x| x * s).collect()
}

pub fn is_zero(a: &[i64]) -> bool {
    a.iter().all(|x| *x == 0)
}

/// Divide out the content of a nonzero vector.
pub fn primitive(a: &[i64]) -> Vec<i64> {
    let g = a.iter().fold(0, |g, x| gcd(g, *x));
    if g == 0 {
        return a.to_vec();
    }
    a.iter().map(|x| x / g).collect()
}

pub fn identity(n: usize) -> IMat {
    (0..n)
        .map(|i| (0..n).map(|j| i64::from(i == j)).collect())
        .collect()
}

pub fn mat_mul(a: &IMat, b: &IMat) -> IMat {
    let inner = b.len();
    let cols = if inner == 0 { 0 } else { b[0].len() };
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn mat_vec(a: &IMat, v: &[i64]) -> Vec<i64> {
    a.iter().map(|row| dot(row, v)).collect()
}

/// Row vector times matrix, i.e. the pullback of a covector.
pub fn covec_mat(c: &[i64], a: &IMat) -> Vec<i64> {
    let cols = if a.is_empty() { 0 } else { a[0].len() };
    (0..cols)
        .map(|j| c.iter().zip(a).map(|(x, row)| x * row[j]).sum())
        .collect()
}

pub fn transpose(a: &IMat) -> IMat {
    if a.is_empty() {
        return vec![];
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect()
}

pub fn to_qmat(a: &IMat) -> Vec<Vec<Q>> {
    a.iter().map(|r| r.iter().map(|x| q(*x)).collect()).collect()
}

/// Inverse of a square rational matrix, `None` if singular.
pub fn qmat_inverse(a: &[Vec<Q>]) -> Option<Vec<Vec<Q>>> {
    let n = a.len();
    let mut m: Vec<Vec<Q>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { Q::one() } else { Q::zero() }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero())?;
        m.swap(col, piv);
        let p = m[col][col].clone();
        for x in m[col].iter_mut() {
            *x = &*x / &p;
        }
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = m[r][col].clone();
                let pivot_row = m[col].clone();
                for (x, y) in m[r].iter_mut().zip(pivot_row) {
                    *x = &*x - &f * y;
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Inverse of an integer matrix that is unimodular over the integers.
pub fn unimodular_inverse(a: &IMat) -> Option<IMat> {
    let inv = qmat_inverse(&to_qmat(a))?;
    inv.iter()
        .map(|row| {
            row.iter()
                .map(|x| if x.is_integer() { x.to_integer().to_i64() } else { None })
                .collect::<Option<Vec<i64>>>()
        })
        .collect()
}

pub fn det(a: &IMat) -> i64 {
    let mut m = to_qmat(a);
    let n = m.len();
    let mut d = Q::one();
    for col in 0..n {
        let Some(piv) = (col..n).find(|&r| !m[r][col].is_zero()) else {
            return 0;
        };
        if piv != col {
            m.swap(col, piv);
            d = -d;
        }
        let p = m[col][col].clone();
        d *= &p;
        for r in col + 1..n {
            let f = &m[r][col] / &p;
            if f.is_zero() {
                continue;
            }
            let pivot_row = m[col].clone();
            for (x, y) in m[r].iter_mut().zip(pivot_row) {
                *x = &*x - &f * y;
            }
        }
    }
    d.to_integer().to_i64().expect("determinant fits in i64")
}

/// Reduced row echelon form; returns the pivot columns.
pub fn rref(m: &mut [Vec<Q>]) -> Vec<usize> {
    let rows = m.len();
    let cols = if rows == 0 { 0 } else { m[0].len() };
    let mut pivots = vec![];
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let pv = m[r][c].clone();
        for x in m[r].iter_mut() {
            *x = &*x / &pv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                let pivot_row = m[r].clone();
                for (x, y) in m[i].iter_mut().zip(pivot_row) {
                    *x = &*x - &f * y;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank(m: &[Vec<Q>]) -> usize {
    let mut m = m.to_vec();
    rref(&mut m).len()
}

/// Basis of the right kernel of a rational matrix with `cols` columns.
pub fn kernel(m: &[Vec<Q>], cols: usize) -> Vec<Vec<Q>> {
    let mut r = m.to_vec();
    let pivots = rref(&mut r);
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![Q::zero(); cols];
            v[f] = Q::one();
            for (i, &p) in pivots.iter().enumerate() {
                v[p] = -r[i][f].clone();
            }
            v
        })
        .collect()
}

/// Scale a rational vector to a primitive integer vector.
pub fn clear_denominators(v: &[Q]) -> Vec<i64> {
    let l = v
        .iter()
        .fold(BigInt::one(), |l, x| num::integer::lcm(l, x.denom().clone()));
    let ints: Vec<i64> = v
        .iter()
        .map(|x| (x * Q::from_integer(l.clone())).to_integer().to_i64().expect("fits"))
        .collect();
    primitive(&ints)
}

/// Parse `"p/q"` or `"p"` into a rational.
pub fn parse_q(s: &str) -> Option<Q> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                None
            } else {
                Some(Q::new(n, d))
            }
        }
        None => s.parse::<BigInt>().ok().map(Q::from_integer),
    }
}

/// Canonical form: `"p"` for integers, `"p/q"` in lowest terms otherwise.
pub fn fmt_q(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn q_abs_le(x: &Q, bound: i64) -> bool {
    x.abs() <= q(bound)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_shear() {
        let s = vec![vec![1, 1], vec![0, 1]];
        assert_eq!(unimodular_inverse(&s).unwrap(), vec![vec![1, -1], vec![0, 1]]);
        assert_eq!(det(&s), 1);
    }

    #[test]
    fn kernel_dimension() {
        let m = to_qmat(&vec![vec![1, 2, 3], vec![2, 4, 6]]);
        assert_eq!(kernel(&m, 3).len(), 2);
    }

    #[test]
    fn rational_round_trip() {
        let x = parse_q("-6/4").unwrap();
        assert_eq!(fmt_q(&x), "-3/2");
        assert_eq!(parse_q("7").unwrap(), q(7));
        assert!(parse_q("1/0").is_none());
    }
}
