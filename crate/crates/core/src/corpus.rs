//! Bundled desk-scale test corpus: procedural grayscale images and
//! random-walk camera-shake kernels. Everything is generated from fixed
//! seeds, so the corpus is identical on every machine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use crate::image::{Image, Kernel};

pub const CORPUS_IMAGES: usize = 20;
pub const CORPUS_SIDE: usize = 128;
pub const MOTION_SIDES: [usize; 8] = [9, 11, 13, 15, 17, 19, 23, 27];

/// Procedural image `index` (0-based, `< CORPUS_IMAGES`) of side `side`.
pub fn corpus_image(index: usize, side: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0_0000 + index as u64);
    let s = side as f64;
    let img = match index % 7 {
        0 => {
            let cell = 6.0 + 10.0 * rng.gen::<f64>();
            let (a, b) = (0.15 + 0.2 * rng.gen::<f64>(), 0.65 + 0.2 * rng.gen::<f64>());
            let rot = 0.3 * rng.gen::<f64>();
            Image::from_fn(side, side, |i, j| {
                let (u, v) = rotate(i as f64, j as f64, rot);
                let even = ((u / cell).floor() + (v / cell).floor()) as i64 % 2 == 0;
                let shade = 0.1 * (j as f64 / s);
                if even {
                    a + shade
                } else {
                    b - shade
                }
            })
        }
        1 => {
            let (gi, gj) = (rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            let bands = 2.0 + 4.0 * rng.gen::<f64>();
            Image::from_fn(side, side, |i, j| {
                let t = 0.5 + gi * i as f64 / s + gj * j as f64 / s;
                0.5 * t + 0.25 * ((bands * t * 6.0).floor() / 6.0).fract() + 0.1
            })
        }
        2 => circles(&mut rng, side, 14),
        3 => {
            let (f1, f2) = (2.0 + 10.0 * rng.gen::<f64>(), 3.0 + 12.0 * rng.gen::<f64>());
            let (p1, p2) = (6.3 * rng.gen::<f64>(), 6.3 * rng.gen::<f64>());
            let chirp = 4.0 * rng.gen::<f64>();
            Image::from_fn(side, side, |i, j| {
                let (u, v) = (i as f64 / s, j as f64 / s);
                0.5 + 0.22 * (TAU * f1 * u + p1).sin() + 0.18 * (TAU * (f2 + chirp * v) * v + p2).cos()
            })
        }
        4 => blobs(&mut rng, side, 10),
        5 => rectangles(&mut rng, side, 12),
        _ => value_noise(&mut rng, side),
    };
    // a light texture layer so no image is piecewise-flat
    let tex = value_noise(&mut rng, side);
    img.add(&tex.map(|v| 0.12 * (v - 0.5))).expect("same shape").clamp01()
}

/// All `CORPUS_IMAGES` bundled images at the default side.
pub fn corpus_images() -> Vec<Image> {
    (0..CORPUS_IMAGES).map(|i| corpus_image(i, CORPUS_SIDE)).collect()
}

fn rotate(i: f64, j: f64, a: f64) -> (f64, f64) {
    (i * a.cos() - j * a.sin(), i * a.sin() + j * a.cos())
}

fn circles(rng: &mut ChaCha8Rng, side: usize, n: usize) -> Image {
    let s = side as f64;
    let shapes: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| (s * rng.gen::<f64>(), s * rng.gen::<f64>(), 4.0 + 0.2 * s * rng.gen::<f64>(), rng.gen::<f64>()))
        .collect();
    let base = 0.2 + 0.3 * rng.gen::<f64>();
    Image::from_fn(side, side, |i, j| {
        let mut v = base;
        for &(ci, cj, r, g) in &shapes {
            if (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2) <= r * r {
                v = g;
            }
        }
        v
    })
}

fn blobs(rng: &mut ChaCha8Rng, side: usize, n: usize) -> Image {
    let s = side as f64;
    let shapes: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            (s * rng.gen::<f64>(), s * rng.gen::<f64>(), 3.0 + 0.12 * s * rng.gen::<f64>(), rng.gen::<f64>() - 0.4)
        })
        .collect();
    Image::from_fn(side, side, |i, j| {
        let mut v = 0.35 + 0.2 * (i as f64 / s);
        for &(ci, cj, r, a) in &shapes {
            let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            v += 0.6 * a * (-d2 / (2.0 * r * r)).exp();
        }
        v
    })
}

fn rectangles(rng: &mut ChaCha8Rng, side: usize, n: usize) -> Image {
    let s = side as f64;
    let shapes: Vec<(f64, f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            let (i0, j0) = (s * rng.gen::<f64>(), s * rng.gen::<f64>());
            (i0, j0, i0 + 6.0 + 0.4 * s * rng.gen::<f64>(), j0 + 6.0 + 0.4 * s * rng.gen::<f64>(), rng.gen::<f64>())
        })
        .collect();
    Image::from_fn(side, side, |i, j| {
        let (x, y) = (i as f64, j as f64);
        let mut v = 0.5;
        for &(i0, j0, i1, j1, g) in &shapes {
            if x >= i0 && x < i1 && y >= j0 && y < j1 {
                v = g;
            }
        }
        v
    })
}

/// Multi-octave bilinear value noise in [0, 1].
fn value_noise(rng: &mut ChaCha8Rng, side: usize) -> Image {
    let mut acc = Image::zeros(side, side, 1);
    let mut amp = 0.5;
    let mut total = 0.0;
    for cells in [4usize, 8, 16, 32] {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.gen::<f64>()).collect();
        let at = |a: usize, b: usize| lattice[a * (cells + 1) + b];
        let scale = cells as f64 / side as f64;
        let layer = Image::from_fn(side, side, |i, j| {
            let (u, v) = (i as f64 * scale, j as f64 * scale);
            let (a, b) = (u.floor() as usize, v.floor() as usize);
            let (fu, fv) = (u - a as f64, v - b as f64);
            let (fu, fv) = (fu * fu * (3.0 - 2.0 * fu), fv * fv * (3.0 - 2.0 * fv));
            let top = at(a, b) * (1.0 - fv) + at(a, b + 1) * fv;
            let bot = at(a + 1, b) * (1.0 - fv) + at(a + 1, b + 1) * fv;
            top * (1.0 - fu) + bot * fu
        });
        acc = acc.add(&layer.scale(amp)).expect("same shape");
        total += amp;
        amp *= 0.55;
    }
    acc.scale(1.0 / total)
}

/// Accumulates unit mass along a polyline into a `side × side` grid by
/// bilinear splatting, with coordinates relative to the center pixel.
pub(crate) fn splat_path(points: &[(f64, f64)], side: usize) -> Vec<f64> {
    let mut taps = vec![0.0; side * side];
    let c = (side / 2) as f64;
    let w = 1.0 / points.len() as f64;
    for &(pi, pj) in points {
        let (u, v) = (pi + c, pj + c);
        let (a, b) = (u.floor(), v.floor());
        let (fu, fv) = (u - a, v - b);
        for (di, wi) in [(0.0, 1.0 - fu), (1.0, fu)] {
            for (dj, wj) in [(0.0, 1.0 - fv), (1.0, fv)] {
                let (ii, jj) = (a + di, b + dj);
                if ii >= 0.0 && jj >= 0.0 && (ii as usize) < side && (jj as usize) < side {
                    taps[ii as usize * side + jj as usize] += w * wi * wj;
                }
            }
        }
    }
    taps
}

/// Camera-shake kernel of side `side` from a smoothed random walk, centered
/// on its centroid and normalized.
pub fn motion_kernel(side: usize, seed: u64) -> Kernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = 64;
    let mut pos = (0.0f64, 0.0f64);
    let mut vel = {
        let a = TAU * rng.gen::<f64>();
        (a.cos(), a.sin())
    };
    let mut path = Vec::with_capacity(steps);
    for _ in 0..steps {
        path.push(pos);
        let turn = 0.7 * (rng.gen::<f64>() - 0.5);
        let (c, s) = (turn.cos(), turn.sin());
        vel = (
            c * vel.0 - s * vel.1 + 0.3 * (rng.gen::<f64>() - 0.5),
            s * vel.0 + c * vel.1 + 0.3 * (rng.gen::<f64>() - 0.5),
        );
        let n = (vel.0 * vel.0 + vel.1 * vel.1).sqrt().max(1e-9);
        vel = (vel.0 / n, vel.1 / n);
        pos = (pos.0 + vel.0, pos.1 + vel.1);
    }
    let (mi, mj) = path.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mi, mj) = (mi / steps as f64, mj / steps as f64);
    let reach = path.iter().map(|p| (p.0 - mi).abs().max((p.1 - mj).abs())).fold(0.0, f64::max).max(1e-9);
    let fit = ((side / 2) as f64 - 0.5) / reach;
    // dense resampling keeps the splatted trace connected
    let mut dense = Vec::new();
    for pair in path.windows(2) {
        for t in 0..8 {
            let f = t as f64 / 8.0;
            let p = (pair[0].0 + f * (pair[1].0 - pair[0].0), pair[0].1 + f * (pair[1].1 - pair[0].1));
            dense.push(((p.0 - mi) * fit, (p.1 - mj) * fit));
        }
    }
    let taps = splat_path(&dense, side);
    let sum: f64 = taps.iter().sum();
    Kernel::new(side, side, taps.into_iter().map(|t| t / sum).collect()).expect("finite taps")
}

/// The eight bundled motion kernels, sides 9 to 27.
pub fn motion_kernels() -> Vec<Kernel> {
    MOTION_SIDES.iter().enumerate().map(|(i, &s)| motion_kernel(s, 0xb1_0000 + i as u64)).collect()
}
