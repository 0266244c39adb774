//! Procedural design datasets used as prior data.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyGenerator {
    /// Random-walk channels per design, inclusive range.
    pub channels: (usize, usize),
    /// Channel half-width in cells, inclusive range.
    pub half_width: (usize, usize),
    /// Probability that a walk step moves right instead of up or down.
    pub forward_bias: f64,
    /// Blobs per design, inclusive range.
    pub blobs: (usize, usize),
    /// Blob radius in cells, inclusive range.
    pub blob_radius: (usize, usize),
    /// Half-open row span of the inlet port on the left edge. Channels start
    /// inside it and its cells are always fluid; `None` allows any row.
    pub inlet_rows: Option<(usize, usize)>,
    /// Same for the outlet port on the right edge.
    pub outlet_rows: Option<(usize, usize)>,
}

impl Default for TopologyGenerator {
    fn default() -> Self {
        Self {
            channels: (1, 3),
            half_width: (0, 1),
            forward_bias: 0.55,
            blobs: (0, 3),
            blob_radius: (1, 3),
            inlet_rows: None,
            outlet_rows: None,
        }
    }
}

/// `n` channel layouts of `width × height`, row-major, values in `{0, 1}`.
/// Design `i` draws from the dataset stream at `(0, i)`.
pub fn synth_topology_dataset(n: usize, width: usize, height: usize, rng: &RngStream) -> Result<Vec<Vec<f64>>> {
    synth_topology_dataset_with(n, width, height, &TopologyGenerator::default(), rng)
}

pub fn synth_topology_dataset_with(
    n: usize,
    width: usize,
    height: usize,
    generator: &TopologyGenerator,
    rng: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 || width < 2 || height < 2 {
        return Err(Error::Config(format!("topology dataset needs n >= 1 and a 2x2 grid, got n={n}, {width}x{height}")));
    }
    for (a, b) in [generator.inlet_rows, generator.outlet_rows].into_iter().flatten() {
        if !(a < b && b <= height) {
            return Err(Error::Config(format!("port rows [{a}, {b}) invalid for height {height}")));
        }
    }
    Ok((0..n).map(|i| one_topology(width, height, generator, &rng.at(0, i as u64))).collect())
}

fn one_topology(w: usize, h: usize, gen: &TopologyGenerator, rng: &RngStream) -> Vec<f64> {
    let mut g = rng.generator();
    let mut grid = vec![0.0; w * h];
    let paint = |grid: &mut Vec<f64>, cx: i64, cy: i64, r: i64| {
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && dx * dx + dy * dy <= r * r + r {
                    grid[y as usize * w + x as usize] = 1.0;
                }
            }
        }
    };
    let (in0, in1) = gen.inlet_rows.unwrap_or((0, h));
    let (out0, out1) = gen.outlet_rows.unwrap_or((0, h));
    let channels = g.gen_range(gen.channels.0..=gen.channels.1.max(gen.channels.0));
    for _ in 0..channels.max(1) {
        let hw = g.gen_range(gen.half_width.0..=gen.half_width.1.max(gen.half_width.0)) as i64;
        let mut x = 0i64;
        let mut y = g.gen_range(in0..in1) as i64;
        paint(&mut grid, x, y, hw);
        // every move is to a 4-neighbour, so the painted walk is connected
        while x < w as i64 - 1 {
            // leave the inlet column straight away
            if x == 0 || g.gen_bool(gen.forward_bias) {
                x += 1;
            } else if g.gen_bool(0.5) {
                y = (y + 1).min(h as i64 - 1);
            } else {
                y = (y - 1).max(0);
            }
            paint(&mut grid, x, y, hw);
        }
        while y < out0 as i64 || y >= out1 as i64 {
            y += if y < out0 as i64 { 1 } else { -1 };
            paint(&mut grid, x, y, hw);
        }
    }
    if gen.inlet_rows.is_some() {
        (in0..in1).for_each(|r| grid[r * w] = 1.0);
    }
    if gen.outlet_rows.is_some() {
        (out0..out1).for_each(|r| grid[r * w + w - 1] = 1.0);
    }
    let blobs = g.gen_range(gen.blobs.0..=gen.blobs.1.max(gen.blobs.0));
    for _ in 0..blobs {
        let r = g.gen_range(gen.blob_radius.0..=gen.blob_radius.1.max(gen.blob_radius.0)) as i64;
        let cx = g.gen_range(0..w) as i64;
        let cy = g.gen_range(0..h) as i64;
        paint(&mut grid, cx, cy, r);
    }
    grid
}

/// Whether fluid cells (value > 0.5) connect the left edge to the right edge.
pub fn has_through_path(values: &[f64], width: usize, height: usize) -> bool {
    let fluid = |i: usize| values[i].clamp(0.0, 1.0) > 0.5;
    let mut seen = vec![false; width * height];
    let mut queue: VecDeque<usize> = (0..height).map(|y| y * width).filter(|&i| fluid(i)).collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % width, i / width);
        if x == width - 1 {
            return true;
        }
        let mut visit = |j: usize| {
            if !seen[j] && fluid(j) {
                seen[j] = true;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        visit(i + 1);
        if y > 0 {
            visit(i - width);
        }
        if y + 1 < height {
            visit(i + width);
        }
    }
    false
}

/// `n` layered stacks of `layers` values in `[0, 1]`: a few constant runs
/// of random level, snapped to `levels` discrete values.
pub fn synth_stack_dataset(n: usize, layers: usize, levels: u32, rng: &RngStream) -> Result<Vec<Vec<f64>>> {
    if n == 0 || layers == 0 || levels < 2 {
        return Err(Error::Config("stack dataset needs n, layers >= 1 and levels >= 2".into()));
    }
    let top = (levels - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let mut g = rng.at(0, i as u64).generator();
            let mut out = Vec::with_capacity(layers);
            while out.len() < layers {
                let run = g.gen_range(1..=4usize);
                let level = g.gen_range(0..levels) as f64 / top;
                for _ in 0..run.min(layers - out.len()) {
                    out.push(level);
                }
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamLabel;

    #[test]
    fn every_topology_is_connected() {
        let data = synth_topology_dataset(300, 16, 16, &RngStream::new(1, StreamLabel::Dataset)).unwrap();
        for d in &data {
            assert!(has_through_path(d, 16, 16));
            assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn fluid_fraction_band() {
        let data = synth_topology_dataset(1000, 16, 16, &RngStream::new(2, StreamLabel::Dataset)).unwrap();
        let mean = data.iter().map(|d| d.iter().sum::<f64>() / d.len() as f64).sum::<f64>() / data.len() as f64;
        assert!((0.3..=0.6).contains(&mean), "mean fluid fraction {mean}");
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let rng = RngStream::new(3, StreamLabel::Dataset);
        assert_eq!(synth_topology_dataset(5, 8, 8, &rng).unwrap(), synth_topology_dataset(5, 8, 8, &rng).unwrap());
        assert_eq!(synth_stack_dataset(5, 32, 8, &rng).unwrap(), synth_stack_dataset(5, 32, 8, &rng).unwrap());
    }

    #[test]
    fn ports_are_open_and_connected() {
        let gen = TopologyGenerator { inlet_rows: Some((6, 10)), outlet_rows: Some((6, 10)), ..Default::default() };
        let data = synth_topology_dataset_with(200, 16, 16, &gen, &RngStream::new(5, StreamLabel::Dataset)).unwrap();
        for d in &data {
            assert!((6..10).all(|r| d[r * 16] == 1.0 && d[r * 16 + 15] == 1.0));
            // reachable from the inlet port alone
            let mut only_inlet = d.clone();
            (0..16).filter(|r| !(6..10).contains(r)).for_each(|r| only_inlet[r * 16] = 0.0);
            assert!(has_through_path(&only_inlet, 16, 16));
        }
    }

    #[test]
    fn path_detection() {
        let mut v = vec![0.0; 9];
        assert!(!has_through_path(&v, 3, 3));
        v[3] = 1.0;
        v[4] = 1.0;
        assert!(!has_through_path(&v, 3, 3));
        v[5] = 1.0;
        assert!(has_through_path(&v, 3, 3));
    }

    #[test]
    fn stacks_use_discrete_levels() {
        let data = synth_stack_dataset(20, 32, 8, &RngStream::new(4, StreamLabel::Dataset)).unwrap();
        for s in &data {
            assert_eq!(s.len(), 32);
            for v in s {
                let k = v * 7.0;
                assert!((k - k.round()).abs() < 1e-12);
            }
        }
    }
}
