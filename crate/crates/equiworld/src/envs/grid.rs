use crate::Arr;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Absolute grid directions in clockwise order. `cw_index` is the storage
/// index; `ccw_index` orders them up, left, down, right so that a quarter
/// rotation acts as the +1 shift of the cyclic group's regular representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    Up,
    Right,
    Down,
    Left,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::Up, Dir::Right, Dir::Down, Dir::Left];

    pub fn cw_index(self) -> usize {
        match self {
            Dir::Up => 0,
            Dir::Right => 1,
            Dir::Down => 2,
            Dir::Left => 3,
        }
    }

    pub fn from_cw_index(i: usize) -> Dir {
        Dir::ALL[i % 4]
    }

    pub fn ccw_index(self) -> usize {
        match self {
            Dir::Up => 0,
            Dir::Left => 1,
            Dir::Down => 2,
            Dir::Right => 3,
        }
    }

    pub fn from_ccw_index(i: usize) -> Dir {
        [Dir::Up, Dir::Left, Dir::Down, Dir::Right][i % 4]
    }

    /// Quarter-turn counter-clockwise, `k` times: up -> left -> down -> right.
    pub fn rotate_ccw(self, k: usize) -> Dir {
        Dir::from_ccw_index(self.ccw_index() + k)
    }

    /// (row delta, col delta); rows grow downward.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Dir::Up => (-1, 0),
            Dir::Right => (0, 1),
            Dir::Down => (1, 0),
            Dir::Left => (0, -1),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dir::Up => "up",
            Dir::Right => "right",
            Dir::Down => "down",
            Dir::Left => "left",
        }
    }

    pub fn from_name(s: &str) -> Option<Dir> {
        Dir::ALL.into_iter().find(|d| d.name() == s)
    }
}

/// Heading-relative directions for the rush-hour variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelDir {
    Forward = 0,
    Right = 1,
    Back = 2,
    Left = 3,
}

impl RelDir {
    pub const ALL: [RelDir; 4] = [RelDir::Forward, RelDir::Right, RelDir::Back, RelDir::Left];

    pub fn name(self) -> &'static str {
        match self {
            RelDir::Forward => "forward",
            RelDir::Right => "right",
            RelDir::Back => "back",
            RelDir::Left => "left",
        }
    }

    pub fn from_name(s: &str) -> Option<RelDir> {
        RelDir::ALL.into_iter().find(|d| d.name() == s)
    }
}

/// Positions of k distinct objects on an n x n grid; rush-hour states carry
/// a heading per object (stored as a clockwise direction index).
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub pos: Vec<(usize, usize)>,
    pub headings: Vec<usize>,
}

impl GridState {
    pub fn to_array(&self) -> Arr {
        let mut v: Vec<f64> = Vec::with_capacity(self.pos.len() * 2 + self.headings.len());
        for &(r, c) in &self.pos {
            v.push(r as f64);
            v.push(c as f64);
        }
        for &h in &self.headings {
            v.push(h as f64);
        }
        Arr::from_f64(&[v.len()], &v)
    }

    pub fn from_array(a: &Arr, k: usize, rush_hour: bool) -> Result<Self, super::EnvError> {
        let want = 2 * k + if rush_hour { k } else { 0 };
        if a.numel() != want {
            return Err(super::EnvError::MalformedDataset(format!(
                "grid state needs {want} values, got {}",
                a.numel()
            )));
        }
        let d = a.data();
        let pos = (0..k).map(|i| (d[2 * i] as usize, d[2 * i + 1] as usize)).collect();
        let headings = if rush_hour { (0..k).map(|i| d[2 * k + i] as usize).collect() } else { Vec::new() };
        Ok(GridState { pos, headings })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum GridRender {
    /// k-channel one-hot grid: the ground-truth target space where object
    /// permutations permute channels and rotations rotate the plane.
    Channels,
    /// RGB image; one fixed-color square per object (plus a heading notch
    /// in the rush-hour variant).
    Pixel,
}

/// Shared machinery of the shapes and rush-hour worlds.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridEnv {
    pub n: usize,
    pub k: usize,
    pub render: GridRender,
    #[serde(default = "default_cell_px")]
    pub cell_px: usize,
}

fn default_cell_px() -> usize {
    10
}

/// Fixed palette of well-separated colors, one per object.
const PALETTE: [[f64; 3]; 5] =
    [[1.0, 0.1, 0.1], [0.1, 1.0, 0.1], [0.15, 0.3, 1.0], [1.0, 0.9, 0.1], [1.0, 0.2, 1.0]];

impl GridEnv {
    pub fn obs_shape(&self) -> Vec<usize> {
        match self.render {
            GridRender::Channels => vec![self.k, self.n, self.n],
            GridRender::Pixel => vec![3, self.n * self.cell_px, self.n * self.cell_px],
        }
    }

    pub fn sample_state<R: Rng>(&self, rng: &mut R, rush_hour: bool) -> GridState {
        let mut cells: Vec<(usize, usize)> = Vec::with_capacity(self.k);
        while cells.len() < self.k {
            let cand = (rng.gen_range(0..self.n), rng.gen_range(0..self.n));
            if !cells.contains(&cand) {
                cells.push(cand);
            }
        }
        let headings =
            if rush_hour { (0..self.k).map(|_| rng.gen_range(0..4usize)).collect() } else { Vec::new() };
        GridState { pos: cells, headings }
    }

    /// Move one object one cell; blocked moves (boundary or occupied target)
    /// are legal no-ops. Headings never change.
    pub fn step(&self, s: &GridState, obj: usize, dir: usize, rush_hour: bool) -> GridState {
        assert!(obj < self.k, "object index {obj} out of range");
        assert!(dir < 4, "direction index {dir} out of range");
        let abs = if rush_hour {
            Dir::from_cw_index((s.headings[obj] + dir) % 4)
        } else {
            Dir::from_cw_index(dir)
        };
        let (dr, dc) = abs.delta();
        let (r, c) = s.pos[obj];
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 || nr >= self.n as isize || nc >= self.n as isize {
            return s.clone();
        }
        let target = (nr as usize, nc as usize);
        if s.pos.iter().any(|&p| p == target) {
            return s.clone();
        }
        let mut out = s.clone();
        out.pos[obj] = target;
        out
    }

    /// Apply (rotation^rot, perm) to a state: cells rotate counter-clockwise
    /// ((r, c) -> (n-1-c, r) per quarter turn), headings co-rotate, and
    /// object i's data moves to slot perm[i].
    pub fn transform(&self, s: &GridState, rot: usize, perm: &[usize]) -> GridState {
        let mut pos = vec![(0usize, 0usize); self.k];
        let mut headings = vec![0usize; s.headings.len()];
        for i in 0..self.k {
            let mut p = s.pos[i];
            for _ in 0..rot % 4 {
                p = (self.n - 1 - p.1, p.0);
            }
            pos[perm[i]] = p;
            if !s.headings.is_empty() {
                // CCW by rot in clockwise indexing is -rot mod 4.
                headings[perm[i]] = (s.headings[i] + 4 - rot % 4) % 4;
            }
        }
        GridState { pos, headings }
    }

    pub fn render(&self, s: &GridState) -> Arr {
        match self.render {
            GridRender::Channels => {
                let mut out = Arr::zeros(&[self.k, self.n, self.n]);
                for (i, &(r, c)) in s.pos.iter().enumerate() {
                    out.data_mut()[(i * self.n + r) * self.n + c] = 1.0;
                }
                out
            }
            GridRender::Pixel => self.render_pixel(s),
        }
    }

    fn render_pixel(&self, s: &GridState) -> Arr {
        let px = self.cell_px;
        let side = self.n * px;
        let mut out = Arr::zeros(&[3, side, side]);
        for (i, &(r, c)) in s.pos.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            // One-pixel margin keeps squares visually separate.
            for y in r * px + 1..(r + 1) * px - 1 {
                for x in c * px + 1..(c + 1) * px - 1 {
                    for ch in 0..3 {
                        out.data_mut()[(ch * side + y) * side + x] = color[ch];
                    }
                }
            }
            if let Some(&h) = s.headings.get(i) {
                // Blank a notch on the heading edge.
                let third = px / 3;
                let (y0, y1, x0, x1) = match Dir::from_cw_index(h) {
                    Dir::Up => (r * px + 1, r * px + 1 + third, c * px + third, c * px + px - third),
                    Dir::Down => ((r + 1) * px - 1 - third, (r + 1) * px - 1, c * px + third, c * px + px - third),
                    Dir::Left => (r * px + third, r * px + px - third, c * px + 1, c * px + 1 + third),
                    Dir::Right => (r * px + third, r * px + px - third, (c + 1) * px - 1 - third, (c + 1) * px - 1),
                };
                for y in y0..y1 {
                    for x in x0..x1 {
                        for ch in 0..3 {
                            out.data_mut()[(ch * side + y) * side + x] = 0.0;
                        }
                    }
                }
            }
        }
        out
    }

    /// Exact index transform of a channels observation: permute channels and
    /// rotate the plane.
    pub fn transform_channels_obs(&self, obs: &Arr, rot: usize, perm: &[usize]) -> Arr {
        assert_eq!(obs.shape(), self.obs_shape().as_slice());
        let n = self.n;
        let mut out = Arr::zeros(obs.shape());
        for i in 0..self.k {
            for r in 0..n {
                for c in 0..n {
                    let mut p = (r, c);
                    for _ in 0..rot % 4 {
                        p = (n - 1 - p.1, p.0);
                    }
                    out.data_mut()[(perm[i] * n + p.0) * n + p.1] = obs.data()[(i * n + r) * n + c];
                }
            }
        }
        out
    }

    /// All states reachable from `s` by one legal single-object move that
    /// actually changes the state, in deterministic order.
    pub fn near_states(&self, s: &GridState, rush_hour: bool) -> Vec<GridState> {
        let mut out = Vec::new();
        for obj in 0..self.k {
            for dir in 0..4 {
                let t = self.step(s, obj, dir, rush_hour);
                if t != *s {
                    out.push(t);
                }
            }
        }
        out
    }
}
