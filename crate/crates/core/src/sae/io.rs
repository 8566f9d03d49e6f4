//! SSAE model file: magic "SSAE", u32 version=1, u32 d, u32 h, u32 K, then
//! b_pre, b_enc, W_enc (row-major), W_dec (row-major) as little-endian f32,
//! closed by a CRC32 footer. Parameters quantize to f32 on save, so
//! save -> load -> save reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::binio::{CheckedReader, CheckedWriter};
use crate::error::{Error, Result};
use crate::sae::SaeModel;

const MAGIC: &[u8; 4] = b"SSAE";
const VERSION: u32 = 1;

pub fn save_model(model: &SaeModel, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = CheckedWriter::new(BufWriter::new(file));
    w.write_all(MAGIC)?;
    w.write_u32(VERSION)?;
    w.write_u32(model.input_dim() as u32)?;
    w.write_u32(model.hidden_dim() as u32)?;
    w.write_u32(model.sparsity() as u32)?;
    for &v in model.b_pre() {
        w.write_f32(v as f32)?;
    }
    for &v in model.b_enc() {
        w.write_f32(v as f32)?;
    }
    for &v in model.w_enc() {
        w.write_f32(v as f32)?;
    }
    for &v in model.w_dec() {
        w.write_f32(v as f32)?;
    }
    w.finish_with_crc()
}

pub fn load_model(path: &Path) -> Result<SaeModel> {
    let file = File::open(path)?;
    let mut r = CheckedReader::new(BufReader::new(file));
    r.set_section("model header");
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let d = r.read_u32()? as usize;
    let h = r.read_u32()? as usize;
    let k = r.read_u32()? as usize;
    if d == 0 || h == 0 || k == 0 || k > h {
        return Err(Error::corrupt(
            "model header",
            format!("implausible dims d={d}, h={h}, k={k}"),
        ));
    }
    r.set_section("model parameters");
    let read_block = |r: &mut CheckedReader<BufReader<File>>, n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let v = r.read_f32()?;
            if !v.is_finite() {
                return Err(Error::corrupt("model parameters", "non-finite parameter"));
            }
            out.push(f64::from(v));
        }
        Ok(out)
    };
    let b_pre = read_block(&mut r, d)?;
    let b_enc = read_block(&mut r, h)?;
    let w_enc = read_block(&mut r, h * d)?;
    let w_dec = read_block(&mut r, d * h)?;
    r.finish_with_crc()?;
    SaeModel::from_parts(d, h, k, w_enc, w_dec, b_pre, b_enc)
}
