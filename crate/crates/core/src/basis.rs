//! Polynomial feature maps for the critic `ρ(X)` and the actors `φ(X)`,
//! `ϕ(X)`.
//!
//! Tables are complete monomial sets over the requested total degrees in
//! graded lexicographic order: total degree ascending, then exponent tuples
//! in descending lexicographic order, so `X1²` precedes `X1X2` precedes
//! `X2²`. The ordering is part of the weight-vector layout and is pinned by
//! [`BasisSet::ordering_hash`].

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialTable {
    n_vars: usize,
    exponents: Vec<Vec<u32>>,
}

impl MonomialTable {
    /// All monomials in `n_vars` variables whose total degree is one of
    /// `degrees`.
    pub fn complete(n_vars: usize, degrees: &[u32]) -> Result<Self> {
        if n_vars == 0 {
            return Err(Error::InvalidConfig("basis needs at least one variable".into()));
        }
        let mut degrees = degrees.to_vec();
        degrees.sort_unstable();
        degrees.dedup();
        if degrees.first() == Some(&0) {
            return Err(Error::InvalidConfig(
                "degree 0 would make a basis function non-vanishing at the origin".into(),
            ));
        }
        let mut exponents = Vec::new();
        for &deg in &degrees {
            let mut block = Vec::new();
            let mut current = vec![0; n_vars];
            compositions(deg, 0, &mut current, &mut block);
            exponents.extend(block);
        }
        Ok(Self { n_vars, exponents })
    }

    /// Even-degree table, e.g. degrees `{2, 4}` for the critic.
    pub fn build_even(n_vars: usize, degrees: &[u32]) -> Result<Self> {
        if degrees.iter().any(|d| d % 2 != 0) {
            return Err(Error::InvalidConfig(format!("even basis given degrees {degrees:?}")));
        }
        Self::complete(n_vars, degrees)
    }

    /// Odd-degree table, e.g. degrees `{1, 3}` for the actors.
    pub fn build_odd(n_vars: usize, degrees: &[u32]) -> Result<Self> {
        if degrees.iter().any(|d| d % 2 != 1) {
            return Err(Error::InvalidConfig(format!("odd basis given degrees {degrees:?}")));
        }
        Self::complete(n_vars, degrees)
    }

    /// A hand-picked table. Rows must be distinct, of length `n_vars`, and
    /// of positive total degree.
    pub fn from_exponents(n_vars: usize, exponents: Vec<Vec<u32>>) -> Result<Self> {
        if n_vars == 0 || exponents.is_empty() {
            return Err(Error::InvalidConfig("empty monomial table".into()));
        }
        let mut seen = HashSet::new();
        for row in &exponents {
            check_dim("monomial exponent tuple", n_vars, row.len())?;
            if row.iter().sum::<u32>() == 0 {
                return Err(Error::InvalidConfig("constant monomial in table".into()));
            }
            if !seen.insert(row.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate monomial {row:?}")));
            }
        }
        Ok(Self { n_vars, exponents })
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    fn max_degree(&self) -> usize {
        self.exponents.iter().flat_map(|r| r.iter()).copied().max().unwrap_or(0) as usize
    }

    /// `powers[v][e] = X_v^e`
    fn power_table(&self, x: &DVector<f64>) -> Vec<Vec<f64>> {
        let max = self.max_degree();
        x.iter()
            .map(|&xv| {
                let mut p = Vec::with_capacity(max + 1);
                p.push(1.0);
                for e in 1..=max {
                    p.push(p[e - 1] * xv);
                }
                p
            })
            .collect()
    }

    pub fn eval(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("basis argument", self.n_vars, x.len())?;
        let pw = self.power_table(x);
        Ok(DVector::from_iterator(
            self.len(),
            self.exponents.iter().map(|row| row.iter().enumerate().map(|(v, &e)| pw[v][e as usize]).product::<f64>()),
        ))
    }

    /// `count × n_vars` matrix whose row `i` is the gradient of monomial `i`.
    pub fn jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim("basis argument", self.n_vars, x.len())?;
        let pw = self.power_table(x);
        let mut jac = DMatrix::zeros(self.len(), self.n_vars);
        for (i, row) in self.exponents.iter().enumerate() {
            for v in 0..self.n_vars {
                if row[v] == 0 {
                    continue;
                }
                let mut g = row[v] as f64 * pw[v][row[v] as usize - 1];
                for (w, &e) in row.iter().enumerate() {
                    if w != v {
                        g *= pw[w][e as usize];
                    }
                }
                jac[(i, v)] = g;
            }
        }
        Ok(jac)
    }

    /// Human-readable monomial names, e.g. `X1^2*X3`.
    pub fn labels(&self) -> Vec<String> {
        self.exponents
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(v, &e)| if e == 1 { format!("X{}", v + 1) } else { format!("X{}^{}", v + 1, e) })
                    .collect::<Vec<_>>()
                    .join("*")
            })
            .collect()
    }
}

impl fmt::Display for MonomialTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.labels().join(", "))
    }
}

/// Exponent tuples of total degree `remaining` over variables `var..`, in
/// descending lexicographic order.
fn compositions(remaining: u32, var: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    let n = current.len();
    if var == n - 1 {
        current[var] = remaining;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e;
        compositions(remaining - e, var + 1, current, out);
    }
    current[var] = 0;
}

/// Critic and actor feature tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSet {
    pub critic: MonomialTable,
    pub actor_u: MonomialTable,
    pub actor_d: MonomialTable,
}

impl BasisSet {
    pub fn new(critic: MonomialTable, actor_u: MonomialTable, actor_d: MonomialTable) -> Result<Self> {
        check_dim("control actor variables", critic.n_vars(), actor_u.n_vars())?;
        check_dim("disturbance actor variables", critic.n_vars(), actor_d.n_vars())?;
        Ok(Self { critic, actor_u, actor_d })
    }

    /// Even degrees `{2, 4}` for the critic, odd degrees `{1, 3}` for both
    /// actors. For four variables this gives 45/24/24 features.
    pub fn polynomial(n_vars: usize) -> Result<Self> {
        Self::new(
            MonomialTable::build_even(n_vars, &[2, 4])?,
            MonomialTable::build_odd(n_vars, &[1, 3])?,
            MonomialTable::build_odd(n_vars, &[1, 3])?,
        )
    }

    pub fn n_vars(&self) -> usize {
        self.critic.n_vars()
    }

    /// Number of stacked unknowns `L1 + m·L2 + q·L3`.
    pub fn unknowns(&self, m: usize, q: usize) -> usize {
        self.critic.len() + m * self.actor_u.len() + q * self.actor_d.len()
    }

    /// SHA-256 over the three exponent tables in order, hex encoded.
    pub fn ordering_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (tag, table) in [("critic", &self.critic), ("actor_u", &self.actor_u), ("actor_d", &self.actor_d)] {
            hasher.update(format!("{tag}:{}:", table.n_vars()).as_bytes());
            for row in table.exponents() {
                let row: Vec<String> = row.iter().map(u32::to_string).collect();
                hasher.update(row.join(",").as_bytes());
                hasher.update(b";");
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn binom(n: u64, k: u64) -> u64 {
        (1..=k).fold(1, |acc, i| acc * (n + 1 - i) / i)
    }

    #[test]
    fn single_variable_tables() {
        let even = MonomialTable::build_even(1, &[2, 4]).unwrap();
        assert_eq!(even.exponents(), &[vec![2], vec![4]]);
        let odd = MonomialTable::build_odd(1, &[1, 3]).unwrap();
        assert_eq!(odd.exponents(), &[vec![1], vec![3]]);
    }

    #[test]
    fn table_counts() {
        assert_eq!(MonomialTable::build_even(4, &[2, 4]).unwrap().len(), 45);
        assert_eq!(MonomialTable::build_odd(4, &[1, 3]).unwrap().len(), 24);
        assert_eq!(MonomialTable::build_even(2, &[2, 4]).unwrap().len(), 8);
        assert_eq!(MonomialTable::build_odd(3, &[1, 3]).unwrap().len(), 13);
        for n in 1..=5u64 {
            let t = MonomialTable::build_even(n as usize, &[2, 4]).unwrap();
            assert_eq!(t.len() as u64, binom(n + 1, 2) + binom(n + 3, 4));
        }
    }

    #[test]
    fn ordering_is_graded_lex() {
        let t = MonomialTable::build_even(4, &[2, 4]).unwrap();
        let labels = t.labels();
        assert_eq!(&labels[..4], &["X1^2", "X1*X2", "X1*X3", "X1*X4"]);
        assert_eq!(labels[9], "X4^2");
        assert_eq!(labels[10], "X1^4");
        assert_eq!(labels[44], "X4^4");
        let degrees: Vec<u32> = t.exponents().iter().map(|r| r.iter().sum()).collect();
        assert!(degrees.windows(2).all(|w| w[0] <= w[1]));
        let unique: HashSet<_> = t.exponents().iter().collect();
        assert_eq!(unique.len(), t.len());
    }

    #[test]
    fn parity_is_enforced() {
        assert!(MonomialTable::build_even(2, &[1]).is_err());
        assert!(MonomialTable::build_odd(2, &[2]).is_err());
        assert!(MonomialTable::complete(0, &[2]).is_err());
        assert!(MonomialTable::from_exponents(2, vec![vec![1, 0], vec![1, 0]]).is_err());
        assert!(MonomialTable::from_exponents(2, vec![vec![0, 0]]).is_err());
    }

    #[test]
    fn eval_special_points() {
        let basis = BasisSet::polynomial(4).unwrap();
        let zero = DVector::zeros(4);
        for table in [&basis.critic, &basis.actor_u, &basis.actor_d] {
            assert!(table.eval(&zero).unwrap().iter().all(|v| *v == 0.0));
        }
        let ones = DVector::from_element(4, 1.0);
        assert!(basis.critic.eval(&ones).unwrap().iter().all(|v| *v == 1.0));

        let x = DVector::from_column_slice(&[2.0, 0.0, 0.0, 0.0]);
        let f = basis.critic.eval(&x).unwrap();
        let nonzero: Vec<(usize, f64)> = f.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
        assert_eq!(nonzero, vec![(0, 4.0), (10, 16.0)]);
        assert!(basis.critic.eval(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn jacobian_hand_values() {
        let t = MonomialTable::from_exponents(4, vec![vec![2, 0, 0, 0], vec![2, 2, 0, 0], vec![0, 0, 3, 1]]).unwrap();
        let j = t.jacobian(&DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(j.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 0.0, 0.0, 0.0]);
        let j = t.jacobian(&DVector::from_column_slice(&[1.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(j.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 2.0, 0.0, 0.0]);
        // X3 = 0 with exponent 3: every partial keeps a zero factor.
        assert!(j.row(2).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let basis = BasisSet::polynomial(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-5;
        for table in [&basis.critic, &basis.actor_u] {
            for _ in 0..100 {
                let x = DVector::from_fn(4, |_, _| rng.random_range(-2.0..=2.0));
                let jac = table.jacobian(&x).unwrap();
                for v in 0..4 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[v] += step;
                    xm[v] -= step;
                    let fd = (table.eval(&xp).unwrap() - table.eval(&xm).unwrap()) / (2.0 * step);
                    for i in 0..table.len() {
                        let a = jac[(i, v)];
                        let err = (a - fd[i]).abs();
                        if a.abs() < 1e-3 {
                            assert!(err <= 1e-8, "abs err {err} at {i},{v}");
                        } else {
                            assert!(err / a.abs() <= 1e-6, "rel err {} at {i},{v}", err / a.abs());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn ordering_hash_is_stable_and_sensitive() {
        let a = BasisSet::polynomial(4).unwrap();
        assert_eq!(a.ordering_hash(), BasisSet::polynomial(4).unwrap().ordering_hash());
        assert_ne!(a.ordering_hash(), BasisSet::polynomial(2).unwrap().ordering_hash());
        assert_eq!(a.unknowns(1, 1), 93);
    }
}
