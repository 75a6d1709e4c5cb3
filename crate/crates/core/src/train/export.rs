//! PNG output and co-attention visualization.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::{invalid, Result};
use crate::nets::{generator_forward, Variant};
use crate::params::Binder;
use crate::synth::{Dataset, Split};
use crate::tensor::{Graph, Scalar, Tensor};

use super::checkpoint::Checkpoint;

/// Maps `[-1,1]` to `[0,255]` affinely, rounding half up. Accepts
/// `[3,H,W]` or a single-channel `[1,H,W]` (written as gray).
pub fn to_rgb8<S: Scalar>(img: &Tensor<S>) -> Result<(u32, u32, Vec<u8>)> {
    let s = img.shape();
    if s.len() != 3 || (s[0] != 3 && s[0] != 1) {
        return Err(invalid("to_rgb8", format!("expected [3,H,W] or [1,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(3 * h * w);
    for i in 0..h * w {
        for ch in 0..3 {
            let v = img.data()[(ch % c) * h * w + i].f64();
            let q = ((v + 1.0) * 0.5 * 255.0 + 0.5).floor().clamp(0.0, 255.0);
            out.push(q as u8);
        }
    }
    Ok((w as u32, h as u32, out))
}

pub fn write_png<S: Scalar>(path: impl AsRef<Path>, img: &Tensor<S>) -> Result<()> {
    let (w, h, data) = to_rgb8(img)?;
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w, h);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}

/// Rescales a map to `[-1,1]` by its own min and max; constant maps go to -1.
fn normalize_map(map: &Tensor<f32>) -> Tensor<f32> {
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    map.map(|v| if span > 0.0 { 2.0 * (v - lo) / span - 1.0 } else { -1.0 })
}

/// Files written by [`dump_attention`] plus the raw attention maps.
#[derive(Clone, Debug)]
pub struct AttentionDump {
    pub summaries: Vec<PathBuf>,
    pub intermediates: Vec<PathBuf>,
    pub attention_maps: Vec<PathBuf>,
    /// `[2N+1,H,W]` before normalization.
    pub attention: Tensor<f32>,
}

impl AttentionDump {
    pub fn file_count(&self) -> usize {
        self.summaries.len() + self.intermediates.len() + self.attention_maps.len()
    }
}

/// Writes source, target, generated and a grid image, every intermediate,
/// and each attention map min-max normalized. `sample` indexes the held-out
/// split.
///
/// Grid rows, each cell one `H x W` image, unused cells black:
/// 0. source, target, generated
/// 1. appearance intermediates 1..N
/// 2. shape intermediates 1..N
/// 3. attention for appearance intermediates
/// 4. attention for shape intermediates
/// 5. attention for the source image
pub fn dump_attention(ck: &Checkpoint, sample: usize, out_dir: &Path) -> Result<AttentionDump> {
    if ck.config.variant != Variant::Full {
        return Err(invalid(
            "dump_attention",
            format!("variant {} has no co-attention fusion to visualize", ck.config.variant),
        ));
    }
    let dataset = Dataset::new(ck.config.dataset()?);
    if sample >= dataset.len(Split::Test) {
        return Err(invalid("dump_attention", format!("sample {sample} is outside the held-out set")));
    }
    let s = dataset.sample::<f32>(&dataset.record(Split::Test, sample))?;
    let graph = Graph::<f32>::new();
    let b = Binder::new(&graph, &ck.generator, false);
    let out = generator_forward(
        &b,
        &ck.config.generator()?,
        graph.constant(s.source_image.clone()),
        graph.constant(s.source_pose.tensor().clone()),
        graph.constant(s.target_pose.tensor().clone()),
    )?;
    let caf = out.caf.expect("full variant produces fusion outputs");
    let attention = (*caf.attention.value()).clone();
    check_simplex(&attention)?;
    let n = ck.config.intermediates;
    let generated = (*out.image.value()).clone();
    let inter_i = (*caf.intermediates_i.value()).clone();
    let inter_p = (*caf.intermediates_p.value()).clone();

    std::fs::create_dir_all(out_dir)?;
    let mut dump = AttentionDump {
        summaries: Vec::new(),
        intermediates: Vec::new(),
        attention_maps: Vec::new(),
        attention: attention.clone(),
    };
    let put = |list: &mut Vec<PathBuf>, name: String, img: &Tensor<f32>| -> Result<()> {
        let path = out_dir.join(name);
        write_png(&path, img)?;
        list.push(path);
        Ok(())
    };
    put(&mut dump.summaries, "source.png".into(), &s.source_image)?;
    put(&mut dump.summaries, "target.png".into(), &s.target_image)?;
    put(&mut dump.summaries, "generated.png".into(), &generated)?;

    let mut rows: Vec<Vec<Tensor<f32>>> = vec![vec![s.source_image.clone(), s.target_image.clone(), generated]];
    for (tag, inter) in [("appearance", &inter_i), ("shape", &inter_p)] {
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let img = inter.slice_channels(3 * i, 3)?;
            put(&mut dump.intermediates, format!("intermediate_{tag}_{i}.png"), &img)?;
            row.push(img);
        }
        rows.push(row);
    }
    let maps: Vec<Tensor<f32>> = (0..2 * n + 1)
        .map(|k| attention.slice_channels(k, 1).map(|m| normalize_map(&m)))
        .collect::<Result<_>>()?;
    for (k, m) in maps.iter().enumerate() {
        put(&mut dump.attention_maps, format!("attention_{k:02}.png"), m)?;
    }
    rows.push(maps[..n].to_vec());
    rows.push(maps[n..2 * n].to_vec());
    rows.push(vec![maps[2 * n].clone()]);
    put(&mut dump.summaries, "grid.png".into(), &compose_grid(&rows))?;
    Ok(dump)
}

fn check_simplex(attention: &Tensor<f32>) -> Result<()> {
    let s = attention.shape();
    let hw = s[1] * s[2];
    for i in 0..hw {
        let mut sum = 0.0f64;
        for k in 0..s[0] {
            let v = attention.data()[k * hw + i] as f64;
            if v < 0.0 {
                return Err(invalid("dump_attention", "negative attention weight"));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-5 {
            return Err(invalid("dump_attention", format!("attention at pixel {i} sums to {sum}")));
        }
    }
    Ok(())
}

/// Tiles `[C,H,W]` images (C = 1 or 3) row by row on a black canvas.
fn compose_grid(rows: &[Vec<Tensor<f32>>]) -> Tensor<f32> {
    let (h, w) = (rows[0][0].shape()[1], rows[0][0].shape()[2]);
    let cols = rows.iter().map(Vec::len).max().unwrap_or(1);
    let (gh, gw) = (rows.len() * h, cols * w);
    let mut grid = Tensor::full(&[3, gh, gw], -1.0f32);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let ch = img.shape()[0];
            for k in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let v = img.data()[((k % ch) * h + y) * w + x];
                        grid.data_mut()[(k * gh + r * h + y) * gw + c * w + x] = v;
                    }
                }
            }
        }
    }
    grid
}
