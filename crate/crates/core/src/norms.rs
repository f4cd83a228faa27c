//! ℓ^p norms and the nearest-neighbour difference semi-norms `Q_p`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lattice::LatticeGrid;

/// Exponent `p ∈ [1, ∞]`. Infinity is its own variant so power sums never
/// see a huge float exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormOrder {
    Finite(f64),
    Infinity,
}

impl NormOrder {
    pub fn finite(p: f64) -> Result<Self> {
        let order = NormOrder::Finite(p);
        order.validate()?;
        Ok(order)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            NormOrder::Finite(p) if p >= 1.0 && p.is_finite() => Ok(()),
            NormOrder::Finite(p) => Err(Error::Parameter(format!("norm exponent must lie in [1, inf], got {p}"))),
            NormOrder::Infinity => Ok(()),
        }
    }

    /// `1/p`, with `1/∞ = 0`.
    pub fn reciprocal(self) -> f64 {
        match self {
            NormOrder::Finite(p) => 1.0 / p,
            NormOrder::Infinity => 0.0,
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormOrder::Finite(p) => write!(f, "{p}"),
            NormOrder::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") || t == "∞" {
            return Ok(NormOrder::Infinity);
        }
        let p: f64 = t
            .parse()
            .map_err(|_| Error::Parameter(format!("cannot parse norm exponent `{t}`")))?;
        NormOrder::finite(p)
    }
}

impl serde::Serialize for NormOrder {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NormOrder::Finite(p) => s.serialize_f64(*p),
            NormOrder::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> serde::Deserialize<'de> for NormOrder {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let order = match Raw::deserialize(d)? {
            Raw::Num(p) => NormOrder::Finite(p),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom)?,
        };
        order.validate().map_err(serde::de::Error::custom)?;
        Ok(order)
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        iter.into_iter().for_each(|v| acc.add(v));
        acc
    }
}

fn power_mean(values: impl Iterator<Item = f64>, p: NormOrder) -> f64 {
    match p {
        NormOrder::Infinity => values.fold(0.0, |m, v| m.max(v.abs())),
        NormOrder::Finite(p) if p == 1.0 => values.map(f64::abs).collect::<CompensatedSum>().value(),
        NormOrder::Finite(p) if p == 2.0 => {
            values.map(|v| v * v).collect::<CompensatedSum>().value().sqrt()
        }
        NormOrder::Finite(p) => values
            .map(|v| v.abs().powf(p))
            .collect::<CompensatedSum>()
            .value()
            .powf(1.0 / p),
    }
}

pub fn lp_norm(x: &[f64], p: NormOrder) -> Result<f64> {
    p.validate()?;
    Ok(power_mean(x.iter().copied(), p))
}

/// `Q_p(x)`: the ℓ^p aggregate of all nearest-neighbour differences; for
/// `p = ∞` the supremum over cells of the summed absolute differences.
pub fn qp_seminorm(x: &[f64], grid: &LatticeGrid, p: NormOrder) -> Result<f64> {
    p.validate()?;
    grid.check_len(x.len())?;
    let value = match p {
        NormOrder::Infinity => (0..x.len())
            .map(|k| {
                let xc = x[k];
                grid.neighbour_indices(k).iter().map(|&m| (x[m] - xc).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max),
        NormOrder::Finite(_) => power_mean(
            (0..x.len()).flat_map(|k| {
                let xc = x[k];
                grid.neighbour_indices(k).into_iter().map(move |m| x[m] - xc)
            }),
            p,
        ),
    };
    Ok(value)
}

/// `(Σ_cells (Σ_neighbours |Δx|)^p)^{1/p}`, the quantity bounded by `4 Q_p`.
pub fn summed_gradient_norm(x: &[f64], grid: &LatticeGrid, p: NormOrder) -> Result<f64> {
    p.validate()?;
    grid.check_len(x.len())?;
    Ok(power_mean(
        (0..x.len()).map(|k| {
            let xc = x[k];
            grid.neighbour_indices(k).iter().map(|&m| (x[m] - xc).abs()).sum::<f64>()
        }),
        p,
    ))
}

/// Fraction of the ℓ¹ mass of `x` within `width` cells of the grid edge.
pub fn boundary_mass_fraction(x: &[f64], grid: &LatticeGrid, width: usize) -> f64 {
    let mut edge = CompensatedSum::default();
    let mut total = CompensatedSum::default();
    for (k, v) in x.iter().enumerate() {
        total.add(v.abs());
        if grid.boundary_distance(k) < width {
            edge.add(v.abs());
        }
    }
    let t = total.value();
    if t == 0.0 {
        0.0
    } else {
        edge.value() / t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormEntry {
    pub p: NormOrder,
    pub lp: f64,
    pub qp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub entries: Vec<NormEntry>,
}

impl NormReport {
    pub fn lp(&self, p: NormOrder) -> Option<f64> {
        self.entries.iter().find(|e| e.p == p).map(|e| e.lp)
    }

    pub fn qp(&self, p: NormOrder) -> Option<f64> {
        self.entries.iter().find(|e| e.p == p).map(|e| e.qp)
    }
}

pub fn norm_report(x: &[f64], grid: &LatticeGrid, orders: &[NormOrder]) -> Result<NormReport> {
    let entries = orders
        .iter()
        .map(|&p| {
            Ok(NormEntry { p, lp: lp_norm(x, p)?, qp: qp_seminorm(x, grid, p)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormReport { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{delta_field, Boundary, Site};

    const INF: NormOrder = NormOrder::Infinity;

    fn p(v: f64) -> NormOrder {
        NormOrder::finite(v).unwrap()
    }

    /// Enumerates all (cell, neighbour) pairs explicitly.
    fn qp_by_enumeration(x: &[f64], g: &LatticeGrid, pp: f64) -> f64 {
        let mut total = 0.0;
        for s in g.sites() {
            for n in g.neighbours(s).unwrap() {
                let d = x[g.index(n).unwrap()] - x[g.index(s).unwrap()];
                total += d.abs().powf(pp);
            }
        }
        total.powf(1.0 / pp)
    }

    #[test]
    fn delta_has_unit_lp_norm() {
        let g = LatticeGrid::new(4, Boundary::Neumann).unwrap();
        let d = delta_field(&g, Site::new(0, 0)).unwrap();
        for order in [p(1.0), p(1.5), p(2.0), p(7.0), INF] {
            assert_eq!(lp_norm(&d, order).unwrap(), 1.0);
        }
    }

    #[test]
    fn constant_l1_norm() {
        let g = LatticeGrid::new(3, Boundary::Periodic).unwrap();
        let c = vec![-0.25; g.len()];
        assert_eq!(lp_norm(&c, p(1.0)).unwrap(), 0.25 * 36.0);
    }

    #[test]
    fn exponent_below_one_is_rejected() {
        assert!(lp_norm(&[1.0], NormOrder::Finite(0.5)).is_err());
        assert!("0.9".parse::<NormOrder>().is_err());
        assert_eq!("inf".parse::<NormOrder>().unwrap(), INF);
        let g = LatticeGrid::new(1, Boundary::Neumann).unwrap();
        assert!(qp_seminorm(&[0.0; 4], &g, NormOrder::Finite(0.0)).is_err());
    }

    #[test]
    fn constants_have_zero_qp() {
        let g = LatticeGrid::new(3, Boundary::Neumann).unwrap();
        let c = vec![1.7; g.len()];
        for order in [p(1.0), p(3.0), INF] {
            assert_eq!(qp_seminorm(&c, &g, order).unwrap(), 0.0);
        }
    }

    #[test]
    fn delta_witnesses_match_enumeration() {
        let g = LatticeGrid::new(4, Boundary::Neumann).unwrap();
        let d = delta_field(&g, Site::new(0, 0)).unwrap();
        // 4 differences at the delta cell plus one at each neighbour.
        assert_eq!(qp_by_enumeration(&d, &g, 1.0), 8.0);
        assert_eq!(qp_seminorm(&d, &g, p(1.0)).unwrap(), 8.0);
        assert_eq!(qp_seminorm(&d, &g, INF).unwrap(), 4.0);
        let q3 = qp_seminorm(&d, &g, p(3.0)).unwrap();
        assert!((q3 - qp_by_enumeration(&d, &g, 3.0)).abs() < 1e-14);
    }

    #[test]
    fn boundary_mass_of_edge_delta() {
        let g = LatticeGrid::new(6, Boundary::Neumann).unwrap();
        let edge = delta_field(&g, Site::new(6, 0)).unwrap();
        let centre = delta_field(&g, Site::new(0, 0)).unwrap();
        assert_eq!(boundary_mass_fraction(&edge, &g, 5), 1.0);
        assert_eq!(boundary_mass_fraction(&centre, &g, 5), 0.0);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = CompensatedSum::default();
        acc.add(1.0);
        for _ in 0..10 {
            acc.add(1e-17);
        }
        acc.add(-1.0);
        assert!((acc.value() - 1e-16).abs() < 1e-30);
    }

    #[test]
    fn report_looks_up_orders() {
        let g = LatticeGrid::new(2, Boundary::Neumann).unwrap();
        let d = delta_field(&g, Site::new(1, 1)).unwrap();
        let rep = norm_report(&d, &g, &[p(1.0), INF]).unwrap();
        assert_eq!(rep.lp(INF), Some(1.0));
        assert_eq!(rep.qp(p(1.0)), Some(qp_by_enumeration(&d, &g, 1.0)));
        assert_eq!(rep.lp(p(2.0)), None);
    }
}
