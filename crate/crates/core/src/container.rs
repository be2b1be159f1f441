//! Portable on-disk container for fields and kernel tables: a directory
//! holding a text descriptor (`meta.txt`, `key = value` lines) and a raw
//! binary payload (`payload.bin`).
//!
//! Payload encoding: complex values as interleaved `(re, im)` IEEE-754
//! f64, little endian, row major in the documented axis order (radial or
//! azimuthal index first, axial index last). The descriptor records the
//! payload length and an FNV-1a 64-bit hash of the payload bytes; both
//! are verified on load, so a round trip is bit-exact or fails loudly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array3, Array4};
use num_complex::Complex64;

use crate::error::{CoreError, Result};
use crate::fields::{ModalField, PhysicalField, Region};
use crate::greens::ModalKernelTable;
use crate::grids::{Geometry, GridSpec};

const FORMAT_LINE: &str = "cylsound-container v1";

/// FNV-1a 64-bit hash (offset 0xcbf29ce484222325, prime 0x100000001b3).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn complex_bytes<'a, I: Iterator<Item = &'a Complex64>>(values: I, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len * 16);
    for v in values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

fn bytes_to_complex(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if bytes.len() % 16 != 0 {
        return Err(CoreError::Container(format!(
            "payload length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(bytes.len() / 16);
    for chunk in bytes.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
        out.push(Complex64::new(re, im));
    }
    Ok(out)
}

struct Meta {
    entries: BTreeMap<String, String>,
}

impl Meta {
    fn new() -> Self {
        Meta {
            entries: BTreeMap::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CoreError::Container(format!("meta line {} is not `key = value`", lineno + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Meta { entries })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| CoreError::Container(format!("meta key `{key}` missing")))
    }

    fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| CoreError::Container(format!("meta key `{key}` is not a number")))
    }

    fn get_usizes(&self, key: &str, n: usize) -> Result<Vec<usize>> {
        let v: Vec<usize> = self
            .get(key)?
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CoreError::Container(format!("meta key `{key}` is malformed")))?;
        if v.len() != n {
            return Err(CoreError::Container(format!(
                "meta key `{key}` needs {n} entries"
            )));
        }
        Ok(v)
    }

    fn get_f64s(&self, key: &str, n: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = self
            .get(key)?
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CoreError::Container(format!("meta key `{key}` is malformed")))?;
        if v.len() != n {
            return Err(CoreError::Container(format!(
                "meta key `{key}` needs {n} entries"
            )));
        }
        Ok(v)
    }
}

fn write_container(dir: &Path, mut meta: Meta, payload: &[u8]) -> Result<()> {
    fs::create_dir_all(dir)?;
    meta.set("format", FORMAT_LINE);
    meta.set("endianness", "little");
    meta.set("payload", "payload.bin");
    meta.set("payload_bytes", payload.len());
    meta.set("hash_fnv1a64", format!("{:#018x}", fnv1a64(payload)));
    let mut f = fs::File::create(dir.join("payload.bin"))?;
    f.write_all(payload)?;
    fs::write(dir.join("meta.txt"), meta.render())?;
    Ok(())
}

fn read_container(dir: &Path) -> Result<(Meta, Vec<u8>)> {
    let meta_text = fs::read_to_string(dir.join("meta.txt"))?;
    let meta = Meta::parse(&meta_text)?;
    if meta.get("format")? != FORMAT_LINE {
        return Err(CoreError::Container(format!(
            "unsupported container format `{}`",
            meta.get("format")?
        )));
    }
    let mut payload = Vec::new();
    fs::File::open(dir.join(meta.get("payload")?))?.read_to_end(&mut payload)?;
    let want_len: usize = meta
        .get("payload_bytes")?
        .parse()
        .map_err(|_| CoreError::Container("bad payload_bytes".into()))?;
    if payload.len() != want_len {
        return Err(CoreError::Container(format!(
            "payload is {} bytes, descriptor says {}",
            payload.len(),
            want_len
        )));
    }
    let want_hash = meta.get("hash_fnv1a64")?;
    let got_hash = format!("{:#018x}", fnv1a64(&payload));
    if !want_hash.eq_ignore_ascii_case(&got_hash) {
        return Err(CoreError::Container(format!(
            "payload hash mismatch: descriptor {want_hash}, computed {got_hash}"
        )));
    }
    Ok((meta, payload))
}

fn grid_meta(meta: &mut Meta, geom: &Geometry, spec: &GridSpec) {
    meta.set(
        "geometry",
        format!("{} {} {} {}", geom.a, geom.r0, geom.b, geom.z_half),
    );
    meta.set(
        "grid",
        format!("{} {} {} {}", spec.nr, spec.nrp, spec.nphi, spec.nz),
    );
}

fn grid_from_meta(meta: &Meta) -> Result<(Geometry, GridSpec)> {
    let g = meta.get_f64s("geometry", 4)?;
    let s = meta.get_usizes("grid", 4)?;
    Ok((
        Geometry {
            a: g[0],
            r0: g[1],
            b: g[2],
            z_half: g[3],
        },
        GridSpec {
            nr: s[0],
            nrp: s[1],
            nphi: s[2],
            nz: s[3],
        },
    ))
}

fn region_from_meta(meta: &Meta) -> Result<Region> {
    match meta.get("region")? {
        "X" => Ok(Region::X),
        "Y" => Ok(Region::Y),
        other => Err(CoreError::Container(format!("unknown region `{other}`"))),
    }
}

fn omega_from_meta(meta: &Meta) -> Result<Option<f64>> {
    match meta.get("omega")? {
        "none" => Ok(None),
        v => v
            .parse()
            .map(Some)
            .map_err(|_| CoreError::Container("bad omega".into())),
    }
}

/// Save a physical-space field.
pub fn save_physical(dir: &Path, field: &PhysicalField, geom: &Geometry) -> Result<()> {
    let mut meta = Meta::new();
    meta.set("kind", "physical-field");
    meta.set("axis_order", "r,phi,z");
    let (a, b, c) = field.values.dim();
    meta.set("shape", format!("{a} {b} {c}"));
    meta.set("region", field.region.as_str());
    meta.set(
        "omega",
        field
            .omega
            .map(|w| w.to_string())
            .unwrap_or_else(|| "none".into()),
    );
    grid_meta(&mut meta, geom, &field.spec);
    let payload = complex_bytes(field.values.iter(), field.values.len());
    write_container(dir, meta, &payload)
}

/// Load a physical-space field and the geometry it was sampled on.
pub fn load_physical(dir: &Path) -> Result<(PhysicalField, Geometry)> {
    let (meta, payload) = read_container(dir)?;
    if meta.get("kind")? != "physical-field" {
        return Err(CoreError::Container(format!(
            "expected a physical-field container, found `{}`",
            meta.get("kind")?
        )));
    }
    let (geom, spec) = grid_from_meta(&meta)?;
    let region = region_from_meta(&meta)?;
    let omega = omega_from_meta(&meta)?;
    let shape = meta.get_usizes("shape", 3)?;
    let values = bytes_to_complex(&payload)?;
    let arr = Array3::from_shape_vec((shape[0], shape[1], shape[2]), values)
        .map_err(|e| CoreError::Container(format!("shape mismatch: {e}")))?;
    let field = PhysicalField::from_values(arr, &spec, region, omega)?;
    Ok((field, geom))
}

/// Save a modal-space field.
pub fn save_modal(dir: &Path, field: &ModalField, geom: &Geometry) -> Result<()> {
    let mut meta = Meta::new();
    meta.set("kind", "modal-field");
    meta.set("axis_order", "n,m,r");
    let (a, b, c) = field.values.dim();
    meta.set("shape", format!("{a} {b} {c}"));
    meta.set("region", field.region.as_str());
    meta.set("omega", field.omega);
    grid_meta(&mut meta, geom, &field.spec);
    let payload = complex_bytes(field.values.iter(), field.values.len());
    write_container(dir, meta, &payload)
}

/// Load a modal-space field and its geometry.
pub fn load_modal(dir: &Path) -> Result<(ModalField, Geometry)> {
    let (meta, payload) = read_container(dir)?;
    if meta.get("kind")? != "modal-field" {
        return Err(CoreError::Container(format!(
            "expected a modal-field container, found `{}`",
            meta.get("kind")?
        )));
    }
    let (geom, spec) = grid_from_meta(&meta)?;
    let region = region_from_meta(&meta)?;
    let omega = meta.get_f64("omega")?;
    let shape = meta.get_usizes("shape", 3)?;
    let values = bytes_to_complex(&payload)?;
    let arr = Array3::from_shape_vec((shape[0], shape[1], shape[2]), values)
        .map_err(|e| CoreError::Container(format!("shape mismatch: {e}")))?;
    Ok((
        ModalField {
            values: arr,
            spec,
            region,
            omega,
        },
        geom,
    ))
}

/// Save a kernel table (both target blocks over the distinct half-spectrum).
pub fn save_kernel_table(dir: &Path, table: &ModalKernelTable) -> Result<()> {
    let mut meta = Meta::new();
    meta.set("kind", "kernel-table");
    meta.set("axis_order", "n,m,r,rp");
    let (xb, yb) = table.blocks();
    let (xd, yd) = (xb.dim(), yb.dim());
    meta.set("x_shape", format!("{} {} {} {}", xd.0, xd.1, xd.2, xd.3));
    meta.set("y_shape", format!("{} {} {} {}", yd.0, yd.1, yd.2, yd.3));
    meta.set("omega", table.omega);
    meta.set("eps", table.eps);
    let flags = table
        .flags
        .iter()
        .map(|(n, m)| format!("{n}:{m}"))
        .collect::<Vec<_>>()
        .join(";");
    meta.set("flags", if flags.is_empty() { "-".into() } else { flags });
    grid_meta(&mut meta, &table.geom, &table.spec);
    let mut payload = complex_bytes(xb.iter(), xb.len());
    payload.extend(complex_bytes(yb.iter(), yb.len()));
    write_container(dir, meta, &payload)
}

/// Load a kernel table.
pub fn load_kernel_table(dir: &Path) -> Result<ModalKernelTable> {
    let (meta, payload) = read_container(dir)?;
    if meta.get("kind")? != "kernel-table" {
        return Err(CoreError::Container(format!(
            "expected a kernel-table container, found `{}`",
            meta.get("kind")?
        )));
    }
    let (geom, spec) = grid_from_meta(&meta)?;
    let omega = meta.get_f64("omega")?;
    let eps = meta.get_f64("eps")?;
    let xs = meta.get_usizes("x_shape", 4)?;
    let ys = meta.get_usizes("y_shape", 4)?;
    let values = bytes_to_complex(&payload)?;
    let x_len: usize = xs.iter().product();
    let y_len: usize = ys.iter().product();
    if values.len() != x_len + y_len {
        return Err(CoreError::Container(format!(
            "payload holds {} values, blocks need {}",
            values.len(),
            x_len + y_len
        )));
    }
    let x_block = Array4::from_shape_vec((xs[0], xs[1], xs[2], xs[3]), values[..x_len].to_vec())
        .map_err(|e| CoreError::Container(format!("x block: {e}")))?;
    let y_block = Array4::from_shape_vec((ys[0], ys[1], ys[2], ys[3]), values[x_len..].to_vec())
        .map_err(|e| CoreError::Container(format!("y block: {e}")))?;
    let flags_text = meta.get("flags")?;
    let mut flags = Vec::new();
    if flags_text != "-" {
        for part in flags_text.split(';') {
            let (n, m) = part
                .split_once(':')
                .ok_or_else(|| CoreError::Container("malformed flags entry".into()))?;
            flags.push((
                n.parse()
                    .map_err(|_| CoreError::Container("bad flag order".into()))?,
                m.parse()
                    .map_err(|_| CoreError::Container("bad flag bin".into()))?,
            ));
        }
    }
    Ok(ModalKernelTable::from_blocks(
        geom, spec, omega, eps, x_block, y_block, flags,
    ))
}
