//! Random cellular topologies: Poisson placement of stations, Boolean disc
//! coverage, and grid quadrature of the coverage regions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileId(pub u32);

impl core::fmt::Display for StationId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A position in the plane, in km.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Rectangular simulation window `[0, width] x [0, height]` (km).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    width: f64,
    height: f64,
}

impl Window {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::param("window width", format!("{width} is not a positive length")));
        }
        if !(height > 0.0 && height.is_finite()) {
            return Err(Error::param("window height", format!("{height} is not a positive length")));
        }
        Ok(Self { width, height })
    }

    pub fn square(side: f64) -> Result<Self> {
        Self::new(side, side)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Large,
    Small,
    SingleTier,
}

/// A cache-equipped base station with a Boolean coverage disc.
#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: StationId,
    pub position: Point,
    pub radius: f64,
    pub tier: Tier,
    /// Sorted, deduplicated.
    cached_files: Vec<FileId>,
}

impl Station {
    pub fn new(
        id: StationId,
        position: Point,
        radius: f64,
        tier: Tier,
        mut cached_files: Vec<FileId>,
    ) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::param("radius", format!("station {id}: {radius} is not a positive length")));
        }
        if !(position.x.is_finite() && position.y.is_finite()) {
            return Err(Error::param("position", format!("station {id} has a non-finite position")));
        }
        cached_files.sort_unstable();
        cached_files.dedup();
        Ok(Self { id, position, radius, tier, cached_files })
    }

    pub fn cached_files(&self) -> &[FileId] {
        &self.cached_files
    }

    pub fn caches(&self, file: FileId) -> bool {
        self.cached_files.binary_search(&file).is_ok()
    }

    /// Closed-disc membership; the single predicate every coverage computation uses.
    #[inline]
    pub fn covers(&self, p: Point) -> bool {
        p.distance_sq(&self.position) <= self.radius * self.radius
    }

    /// Same station with a different coverage radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Station::new(self.id, self.position, radius, self.tier, self.cached_files.clone())
    }
}

/// File catalog with request probabilities (file `i` has id `FileId(i)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    popularity: Vec<f64>,
    zipf_s: Option<f64>,
}

impl Catalog {
    /// Zipf law: popularity of rank `i` (1-based) proportional to `i^-s`.
    pub fn zipf(file_count: usize, s: f64) -> Result<Self> {
        if file_count == 0 {
            return Err(Error::param("file count", "catalog must hold at least one file"));
        }
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::param("zipf exponent", format!("{s} is not a nonnegative number")));
        }
        let weights: Vec<f64> = (1..=file_count).map(|i| libm::pow(i as f64, -s)).collect();
        let norm: f64 = weights.iter().sum();
        let popularity = weights.into_iter().map(|w| w / norm).collect();
        Ok(Self { popularity, zipf_s: Some(s) })
    }

    pub fn uniform(file_count: usize) -> Result<Self> {
        let mut c = Self::zipf(file_count, 0.0)?;
        c.zipf_s = None;
        Ok(c)
    }

    pub fn from_popularity(popularity: Vec<f64>, zipf_s: Option<f64>) -> Result<Self> {
        if popularity.is_empty() {
            return Err(Error::param("popularity", "catalog must hold at least one file"));
        }
        if popularity.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::param("popularity", "every entry must be positive"));
        }
        let total: f64 = popularity.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param("popularity", format!("entries sum to {total}, not 1")));
        }
        Ok(Self { popularity, zipf_s })
    }

    pub fn file_count(&self) -> usize {
        self.popularity.len()
    }

    pub fn popularity(&self) -> &[f64] {
        &self.popularity
    }

    pub fn zipf_s(&self) -> Option<f64> {
        self.zipf_s
    }

    pub fn files(&self) -> impl Iterator<Item = FileId> + '_ {
        (0..self.popularity.len() as u32).map(FileId)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    pub window: Window,
    pub stations: Vec<Station>,
    pub catalog: Catalog,
}

impl NetworkInstance {
    pub fn new(window: Window, stations: Vec<Station>, catalog: Catalog) -> Result<Self> {
        let mut ids: Vec<StationId> = stations.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInstance("duplicate station id".into()));
        }
        let files = catalog.file_count() as u32;
        for s in &stations {
            if let Some(f) = s.cached_files().iter().find(|f| f.0 >= files) {
                return Err(Error::InvalidInstance(format!(
                    "station {} caches file {} outside a catalog of {files}",
                    s.id, f.0
                )));
            }
        }
        Ok(Self { window, stations, catalog })
    }

    pub fn station(&self, id: StationId) -> Option<&Station> {
        self.stations.iter().find(|s| s.id == id)
    }
}

/// Homogeneous Poisson point process in `window`, reproducible from `seed`.
pub fn sample_ppp(density: f64, window: Window, seed: u64) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_ppp_with(&mut rng, density, window)
}

pub fn sample_ppp_with<R: Rng + ?Sized>(rng: &mut R, density: f64, window: Window) -> Result<Vec<Point>> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::param("density", format!("{density} is not a positive intensity")));
    }
    let mean = density * window.area();
    let count = Poisson::new(mean)
        .map_err(|e| Error::param("density", format!("{e}")))?
        .sample(rng) as usize;
    Ok((0..count)
        .map(|_| Point::new(rng.random::<f64>() * window.width(), rng.random::<f64>() * window.height()))
        .collect())
}

/// Mean number of covering stations seen by a user who is covered at all,
/// under the Boolean model: `x / (1 - e^-x)` with `x = density * pi * r^2`.
pub fn mean_coverage(density: f64, radius: f64) -> f64 {
    let x = density * PI * radius * radius;
    if x == 0.0 {
        return 1.0;
    }
    x / -libm::expm1(-x)
}

/// Inverse of [`mean_coverage`] in the radius, by bisection.
pub fn radius_for_mean_coverage(density: f64, target: f64) -> Result<f64> {
    if !(density > 0.0 && density.is_finite()) {
        return Err(Error::param("density", format!("{density} is not a positive intensity")));
    }
    if !(target > 1.0 && target.is_finite()) {
        return Err(Error::param(
            "target coverage",
            format!("{target} is not above 1 (a covered user always sees at least one station)"),
        ));
    }
    // mean_coverage(x) >= x, so the radius reaching x = target is an upper bracket.
    let mut lo = 0.0_f64;
    let mut hi = libm::sqrt(target / (density * PI));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean_coverage(density, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let err = |r: f64| (mean_coverage(density, r) - target).abs();
    Ok(if err(lo) < err(hi) { lo } else { hi })
}

/// A coverage region: cells covered by exactly the same set of stations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub cells: u64,
    pub area: f64,
    /// Mean of the covered cell centers.
    pub centroid: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMap {
    regions: BTreeMap<Vec<StationId>, Region>,
    resolution: f64,
    cell_area: f64,
}

impl RegionMap {
    pub fn iter(&self) -> impl Iterator<Item = (&[StationId], &Region)> {
        self.regions.iter().map(|(k, v)| (k.as_slice(), v))
    }

    pub fn get(&self, key: &[StationId]) -> Option<&Region> {
        self.regions.get(key)
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// Grid resolution used for the quadrature (cells per km).
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_area
    }

    pub fn covered_cells(&self) -> u64 {
        self.regions.values().map(|r| r.cells).sum()
    }

    pub fn total_area(&self) -> f64 {
        self.regions.values().map(|r| r.area).sum()
    }
}

/// Regular grid of cells over a window; cell `(i, j)` has its center at
/// `((i + 0.5) dx, (j + 0.5) dy)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl Grid {
    pub fn new(window: Window, resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::param("grid resolution", format!("{resolution} cells/km")));
        }
        let nx = libm::round(window.width() * resolution).max(1.0) as usize;
        let ny = libm::round(window.height() * resolution).max(1.0) as usize;
        Ok(Self { nx, ny, dx: window.width() / nx as f64, dy: window.height() / ny as f64 })
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Point {
        Point::new((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }
}

/// A maximal horizontal run of cells `[start, end)` in row `row` covered by
/// exactly the stations `covering` (indices into the station slice, ordered by id).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoveredRun<'a> {
    pub row: usize,
    pub start: usize,
    pub end: usize,
    pub covering: &'a [usize],
}

/// Walk every covered grid cell, grouped into runs of identical covering sets.
///
/// A disc meets a grid row in a contiguous interval of cells, so each row is
/// resolved from per-station intervals; interval ends are snapped onto
/// [`Station::covers`] so the result equals a cell-by-cell test.
pub fn for_each_covered_run<F>(stations: &[Station], grid: &Grid, mut visit: F)
where
    F: FnMut(CoveredRun<'_>),
{
    let mut order: Vec<usize> = (0..stations.len()).collect();
    order.sort_by_key(|&k| stations[k].id);

    let mut spans: Vec<(usize, usize, usize)> = Vec::new(); // (first, last, station index)
    let mut cuts: Vec<usize> = Vec::new();
    let mut covering: Vec<usize> = Vec::new();

    for j in 0..grid.ny {
        spans.clear();
        let yc = (j as f64 + 0.5) * grid.dy;
        for &k in &order {
            if let Some((a, b)) = row_span(&stations[k], grid, j, yc) {
                spans.push((a, b, k));
            }
        }
        if spans.is_empty() {
            continue;
        }
        cuts.clear();
        for &(a, b, _) in &spans {
            cuts.push(a);
            cuts.push(b + 1);
        }
        cuts.sort_unstable();
        cuts.dedup();
        for w in cuts.windows(2) {
            let (start, end) = (w[0], w[1]);
            covering.clear();
            covering.extend(spans.iter().filter(|s| s.0 <= start && s.1 >= end - 1).map(|s| s.2));
            if !covering.is_empty() {
                visit(CoveredRun { row: j, start, end, covering: &covering });
            }
        }
    }
}

/// Inclusive range of cells in row `j` whose centers lie in the station's disc.
fn row_span(st: &Station, grid: &Grid, j: usize, yc: f64) -> Option<(usize, usize)> {
    let dyc = yc - st.position.y;
    let rem = st.radius * st.radius - dyc * dyc;
    if rem < 0.0 {
        return None;
    }
    let covers = |i: usize| st.covers(grid.center(i, j));
    let last = grid.nx as isize - 1;
    let half = libm::sqrt(rem);
    let lo = libm::ceil((st.position.x - half) / grid.dx - 0.5) as isize;
    let hi = libm::floor((st.position.x + half) / grid.dx - 0.5) as isize;
    let (mut a, mut b) = (lo.clamp(0, last), hi.clamp(0, last));
    if lo > last || hi < 0 {
        a = 1;
        b = 0;
    }
    while a <= b && !covers(a as usize) {
        a += 1;
    }
    while b >= a && !covers(b as usize) {
        b -= 1;
    }
    if a > b {
        // Rounding can empty the estimate for very thin chords; probe around the center column.
        let c = libm::floor(st.position.x / grid.dx) as isize;
        let seed = (c - 1..=c + 1).find(|&i| (0..=last).contains(&i) && covers(i as usize))?;
        a = seed;
        b = seed;
    }
    while a > 0 && covers(a as usize - 1) {
        a -= 1;
    }
    while b < last && covers(b as usize + 1) {
        b += 1;
    }
    Some((a as usize, b as usize))
}

/// Deterministic grid quadrature of the coverage regions. Cells covered by no
/// station are discarded; discs are clipped to the window.
pub fn extract_regions(stations: &[Station], window: Window, resolution: f64) -> Result<RegionMap> {
    let grid = Grid::new(window, resolution)?;
    struct Acc {
        cells: u64,
        sum_x: f64,
        sum_y: f64,
    }
    let mut acc: BTreeMap<Vec<StationId>, Acc> = BTreeMap::new();
    let mut key: Vec<StationId> = Vec::new();
    for_each_covered_run(stations, &grid, |run| {
        key.clear();
        key.extend(run.covering.iter().map(|&k| stations[k].id));
        let n = (run.end - run.start) as u64;
        let sum_x = grid.dx * (n as f64) * ((run.start + run.end) as f64) * 0.5;
        let sum_y = (n as f64) * (run.row as f64 + 0.5) * grid.dy;
        match acc.get_mut(key.as_slice()) {
            Some(a) => {
                a.cells += n;
                a.sum_x += sum_x;
                a.sum_y += sum_y;
            }
            None => {
                acc.insert(key.clone(), Acc { cells: n, sum_x, sum_y });
            }
        }
    });
    let cell_area = grid.cell_area();
    let regions = acc
        .into_iter()
        .map(|(k, a)| {
            let n = a.cells as f64;
            (k, Region { cells: a.cells, area: n * cell_area, centroid: Point::new(a.sum_x / n, a.sum_y / n) })
        })
        .collect();
    Ok(RegionMap { regions, resolution, cell_area })
}

/// Draw `cache_size` distinct files uniformly at random.
pub fn random_cache<R: Rng + ?Sized>(rng: &mut R, catalog: &Catalog, cache_size: usize) -> Vec<FileId> {
    let mut files: Vec<FileId> = catalog.files().collect();
    let take = cache_size.min(files.len());
    let (picked, _) = files.partial_shuffle(rng, take);
    let mut picked = picked.to_vec();
    picked.sort_unstable();
    picked
}

/// Single-tier network: PPP stations of one radius, each caching
/// `cache_size` files drawn uniformly without replacement.
pub fn generate_single_tier<R: Rng + ?Sized>(
    rng: &mut R,
    window: Window,
    density: f64,
    radius: f64,
    catalog: Catalog,
    cache_size: usize,
) -> Result<NetworkInstance> {
    let points = sample_ppp_with(rng, density, window)?;
    let mut stations = Vec::with_capacity(points.len());
    for (k, p) in points.into_iter().enumerate() {
        let cache = random_cache(rng, &catalog, cache_size);
        stations.push(Station::new(StationId(k as u32), p, radius, Tier::SingleTier, cache)?);
    }
    NetworkInstance::new(window, stations, catalog)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTierLayout {
    pub large_density: f64,
    pub small_density: f64,
    pub large_radius: f64,
    pub small_radius: f64,
}

/// Two-tier network: large stations cache the two most popular files, small
/// stations cache one of those two uniformly at random. Large stations take
/// the lower ids.
pub fn generate_two_tier<R: Rng + ?Sized>(
    rng: &mut R,
    window: Window,
    layout: TwoTierLayout,
    catalog: Catalog,
) -> Result<NetworkInstance> {
    if catalog.file_count() < 2 {
        return Err(Error::param("file count", "two-tier placement needs at least two files"));
    }
    let large = sample_ppp_with(rng, layout.large_density, window)?;
    let small = if layout.small_density > 0.0 {
        sample_ppp_with(rng, layout.small_density, window)?
    } else {
        Vec::new()
    };
    let mut stations = Vec::with_capacity(large.len() + small.len());
    for p in large {
        let id = StationId(stations.len() as u32);
        stations.push(Station::new(id, p, layout.large_radius, Tier::Large, alloc::vec![FileId(0), FileId(1)])?);
    }
    for p in small {
        let id = StationId(stations.len() as u32);
        let file = FileId(rng.random_range(0..2u32));
        stations.push(Station::new(id, p, layout.small_radius, Tier::Small, alloc::vec![file])?);
    }
    NetworkInstance::new(window, stations, catalog)
}
