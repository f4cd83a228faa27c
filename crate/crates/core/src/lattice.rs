//! Truncated square lattices, nearest-neighbour access and per-cell fields.
//!
//! A lattice of half width `K` holds the sites `i, j ∈ {-K+1, ..., K}`, so the
//! side length is `N = 2K` and the four centre cells are `(0,0)`, `(0,1)`,
//! `(1,0)` and `(1,1)`. Fields are flat row-major arrays where site `(i, j)`
//! lives at `(i + K - 1) * N + (j + K - 1)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice site `(i, j)` in centred coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site {
    pub i: i64,
    pub j: i64,
}

impl Site {
    pub const fn new(i: i64, j: i64) -> Self {
        Site { i, j }
    }

    /// Quarter turn about the theoretical centre at `i = j = 1/2`:
    /// `(i, j) -> (j, 1 - i)`.
    pub const fn rotated(self) -> Site {
        Site { i: self.j, j: 1 - self.i }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.i, self.j)
    }
}

impl From<(i64, i64)> for Site {
    fn from((i, j): (i64, i64)) -> Self {
        Site { i, j }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Zero flux: an off-grid neighbour is replaced by the cell itself.
    Neumann,
    /// Indices wrap modulo the side length.
    Periodic,
}

impl Boundary {
    pub fn as_str(self) -> &'static str {
        match self {
            Boundary::Neumann => "neumann",
            Boundary::Periodic => "periodic",
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neumann" => Ok(Boundary::Neumann),
            "periodic" => Ok(Boundary::Periodic),
            other => Err(Error::Parameter(format!("unknown boundary `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeGrid {
    half_width: usize,
    boundary: Boundary,
}

impl LatticeGrid {
    pub fn new(half_width: usize, boundary: Boundary) -> Result<Self> {
        if half_width == 0 {
            return Err(Error::Parameter("lattice half width must be positive".into()));
        }
        Ok(LatticeGrid { half_width, boundary })
    }

    /// Grid with side length `side`, which must be even and positive.
    pub fn with_side(side: usize, boundary: Boundary) -> Result<Self> {
        if side == 0 || side % 2 != 0 {
            return Err(Error::Parameter(format!(
                "lattice side length must be even and positive, got {side}"
            )));
        }
        Self::new(side / 2, boundary)
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Side length `N = 2K`.
    pub fn side(&self) -> usize {
        2 * self.half_width
    }

    /// Number of cells `N²`.
    pub fn len(&self) -> usize {
        self.side() * self.side()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_index(&self) -> i64 {
        1 - self.half_width as i64
    }

    pub fn max_index(&self) -> i64 {
        self.half_width as i64
    }

    pub fn contains(&self, site: Site) -> bool {
        let (lo, hi) = (self.min_index(), self.max_index());
        (lo..=hi).contains(&site.i) && (lo..=hi).contains(&site.j)
    }

    pub fn index(&self, site: Site) -> Result<usize> {
        if !self.contains(site) {
            return Err(Error::Index { site, half_width: self.half_width });
        }
        let off = self.half_width as i64 - 1;
        let n = self.side();
        Ok((site.i + off) as usize * n + (site.j + off) as usize)
    }

    pub fn site(&self, index: usize) -> Site {
        let n = self.side();
        let off = self.half_width as i64 - 1;
        Site::new((index / n) as i64 - off, (index % n) as i64 - off)
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.len()).map(move |k| self.site(k))
    }

    /// Flat indices of the neighbours `(i+1,j), (i-1,j), (i,j+1), (i,j-1)`.
    ///
    /// Under Neumann an off-grid neighbour is the cell itself.
    #[inline]
    pub fn neighbour_indices(&self, index: usize) -> [usize; 4] {
        let n = self.side();
        self.neighbour_indices_rc(index / n, index % n)
    }

    /// As [`neighbour_indices`](Self::neighbour_indices), addressed by storage
    /// row and column; avoids the division in tight sweeps.
    #[inline]
    pub fn neighbour_indices_rc(&self, row: usize, col: usize) -> [usize; 4] {
        let n = self.side();
        let index = row * n + col;
        let periodic = self.boundary == Boundary::Periodic;
        let up = if row + 1 < n {
            index + n
        } else if periodic {
            col
        } else {
            index
        };
        let down = if row > 0 {
            index - n
        } else if periodic {
            (n - 1) * n + col
        } else {
            index
        };
        let right = if col + 1 < n {
            index + 1
        } else if periodic {
            row * n
        } else {
            index
        };
        let left = if col > 0 {
            index - 1
        } else if periodic {
            row * n + n - 1
        } else {
            index
        };
        [up, down, right, left]
    }

    /// Neighbours of `site` in the order `(i+1,j), (i-1,j), (i,j+1), (i,j-1)`.
    pub fn neighbours(&self, site: Site) -> Result<[Site; 4]> {
        let k = self.index(site)?;
        Ok(self.neighbour_indices(k).map(|m| self.site(m)))
    }

    /// Number of cells between `index` and the nearest grid edge
    /// (0 for cells on the edge).
    pub fn boundary_distance(&self, index: usize) -> usize {
        let n = self.side();
        let (row, col) = (index / n, index % n);
        row.min(n - 1 - row).min(col).min(n - 1 - col)
    }

    /// True when at least one neighbour is replaced by the cell itself.
    pub fn touches_boundary(&self, index: usize) -> bool {
        self.neighbour_indices(index).contains(&index)
    }

    /// Flat-index permutation of the quarter turn `(i, j) -> (j, 1 - i)`:
    /// entry `k` is the index of the rotated image of site `k`.
    pub fn rotation_map(&self) -> Vec<usize> {
        (0..self.len())
            .map(|k| {
                self.index(self.site(k).rotated())
                    .expect("centred grids are closed under the quarter turn")
            })
            .collect()
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Shape { expected: self.len(), got: len });
        }
        Ok(())
    }
}

/// Sum of `x_{i',j'} - x_{i,j}` over the four neighbours of `site`.
pub fn neighbour_sum_diff(field: &[f64], grid: &LatticeGrid, site: Site) -> Result<f64> {
    grid.check_len(field.len())?;
    let k = grid.index(site)?;
    let xc = field[k];
    Ok(grid.neighbour_indices(k).iter().map(|&m| field[m] - xc).sum())
}

/// Applies the unit nearest-neighbour difference stencil to every cell.
pub fn laplacian_into(grid: &LatticeGrid, x: &[f64], out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let xc = x[k];
        *o = grid.neighbour_indices(k).iter().map(|&m| x[m] - xc).sum();
    }
}

pub fn laplacian(grid: &LatticeGrid, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    laplacian_into(grid, x, &mut out);
    out
}

/// Unit mass at `site`, zero elsewhere.
pub fn delta_field(grid: &LatticeGrid, site: Site) -> Result<Vec<f64>> {
    let mut x = vec![0.0; grid.len()];
    x[grid.index(site)?] = 1.0;
    Ok(x)
}

/// Discrete Gaussian bump centred at `centre` (in site coordinates) with the
/// given full width at half maximum, scaled to total mass `mass`.
pub fn gaussian_bump(grid: &LatticeGrid, centre: (f64, f64), fwhm: f64, mass: f64) -> Result<Vec<f64>> {
    if !(fwhm > 0.0) || !fwhm.is_finite() {
        return Err(Error::Parameter(format!("bump width must be positive, got {fwhm}")));
    }
    let sigma = fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt());
    let mut x: Vec<f64> = grid
        .sites()
        .map(|s| {
            let di = s.i as f64 - centre.0;
            let dj = s.j as f64 - centre.1;
            (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = x.iter().sum();
    if total == 0.0 {
        return Err(Error::Parameter("bump centre lies too far outside the grid".into()));
    }
    let scale = mass / total;
    x.iter_mut().for_each(|v| *v *= scale);
    Ok(x)
}

/// Per-cell amplitude and phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarField {
    pub grid: LatticeGrid,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
}

impl PolarField {
    pub fn new(grid: LatticeGrid, r: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        grid.check_len(r.len())?;
        grid.check_len(theta.len())?;
        if let Some(k) = r.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Parameter(format!(
                "amplitude at {} must be finite and nonnegative, got {}",
                grid.site(k),
                r[k]
            )));
        }
        if let Some(k) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("phase at {} is not finite", grid.site(k))));
        }
        Ok(PolarField { grid, r, theta })
    }

    pub fn uniform(grid: LatticeGrid, r: f64, theta: f64) -> Result<Self> {
        Self::new(grid, vec![r; grid.len()], vec![theta; grid.len()])
    }

    pub fn to_complex(&self) -> ComplexField {
        polar_to_complex(self)
    }
}

/// Per-cell real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: LatticeGrid,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexField {
    pub fn new(grid: LatticeGrid, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        grid.check_len(re.len())?;
        grid.check_len(im.len())?;
        Ok(ComplexField { grid, re, im })
    }

    pub fn zeros(grid: LatticeGrid) -> Self {
        ComplexField { grid, re: vec![0.0; grid.len()], im: vec![0.0; grid.len()] }
    }
}

pub fn polar_to_complex(p: &PolarField) -> ComplexField {
    let (re, im) = p
        .r
        .iter()
        .zip(&p.theta)
        .map(|(&r, &t)| {
            let (s, c) = t.sin_cos();
            (r * c, r * s)
        })
        .unzip();
    ComplexField { grid: p.grid, re, im }
}

/// Converts to polar form. Cells with `z = 0` get `theta = 0`; their indices
/// are returned alongside the field.
pub fn complex_to_polar(c: &ComplexField) -> (PolarField, Vec<usize>) {
    let mut flagged = Vec::new();
    let mut r = Vec::with_capacity(c.re.len());
    let mut theta = Vec::with_capacity(c.re.len());
    for (k, (&x, &y)) in c.re.iter().zip(&c.im).enumerate() {
        if x == 0.0 && y == 0.0 {
            flagged.push(k);
            r.push(0.0);
            theta.push(0.0);
        } else {
            r.push(x.hypot(y));
            theta.push(y.atan2(x));
        }
    }
    (PolarField { grid: c.grid, r, theta }, flagged)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}
