//! Binary little-endian PLY in the usual Gaussian-splatting vertex layout:
//!
//! ```text
//! x y z  f_dc_0..2  f_rest_0..  opacity  scale_0..2  rot_0..3
//! ```
//!
//! All properties are `float`. Higher-order SH coefficients are stored channel
//! by channel (all red coefficients, then green, then blue). Opacities are
//! logits, scales are logs and rotations are raw `(w, x, y, z)` quaternions.
//! Values are narrowed to `f32` on save.

use std::path::Path;

use nalgebra::{Vector3, Vector4};

use super::atomic::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::gaussians::{sh_coeff_count, GaussianCloud, MAX_SH_DEGREE};

const MAGIC: &str = "ply";
const FORMAT: &str = "format binary_little_endian 1.0";
const END: &str = "end_header";

fn property_names(sh_degree: usize) -> Vec<String> {
    let rest = 3 * (sh_coeff_count(sh_degree) - 1);
    let mut names: Vec<String> = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"].iter().map(|s| s.to_string()).collect();
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

pub fn encode_ply(cloud: &GaussianCloud) -> Vec<u8> {
    let names = property_names(cloud.sh_degree());
    let mut out = String::new();
    out.push_str(&format!("{MAGIC}\n{FORMAT}\nelement vertex {}\n", cloud.len()));
    for n in &names {
        out.push_str(&format!("property float {n}\n"));
    }
    out.push_str(END);
    out.push('\n');
    let mut bytes = out.into_bytes();
    let k = cloud.sh_count();
    let mut put = |v: f64| bytes.extend_from_slice(&(v as f32).to_le_bytes());
    for i in 0..cloud.len() {
        cloud.positions[i].iter().for_each(|v| put(*v));
        let sh = cloud.sh(i);
        sh[0].iter().for_each(|v| put(*v));
        for c in 0..3 {
            for coeff in &sh[1..k] {
                put(coeff[c]);
            }
        }
        put(cloud.opacity_logits[i]);
        cloud.log_scales[i].iter().for_each(|v| put(*v));
        cloud.rotations[i].iter().for_each(|v| put(*v));
    }
    bytes
}

/// Reads lines of the header, remembering where each starts.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let len = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
        let text =
            std::str::from_utf8(&rest[..len]).map_err(|_| Error::parse(start, "header line is not valid UTF-8"))?;
        self.pos = start + len + 1;
        Ok((start, text))
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let (at, line) = self.line()?;
        if line != want {
            return Err(Error::parse(at, format!("expected {want:?}, found {line:?}")));
        }
        Ok(())
    }
}

pub fn decode_ply(bytes: &[u8]) -> Result<GaussianCloud> {
    let mut h = HeaderReader { bytes, pos: 0 };
    h.expect(MAGIC)?;
    h.expect(FORMAT)?;
    let (at, line) = h.line()?;
    let count_text = line
        .strip_prefix("element vertex ")
        .ok_or_else(|| Error::parse(at, format!("expected vertex element, found {line:?}")))?;
    let count: usize = count_text
        .parse()
        .ok()
        .filter(|n: &usize| n.to_string() == count_text)
        .ok_or_else(|| Error::parse(at, format!("bad vertex count {count_text:?}")))?;

    let mut names = Vec::new();
    let end_at = loop {
        let (at, line) = h.line()?;
        if line == END {
            break at;
        }
        let name = line
            .strip_prefix("property float ")
            .ok_or_else(|| Error::parse(at, format!("unexpected header line {line:?}")))?;
        names.push((at, name.to_string()));
    };
    let sh_degree = (0..=MAX_SH_DEGREE)
        .find(|d| property_names(*d).len() == names.len())
        .ok_or_else(|| Error::parse(end_at, format!("{} properties match no SH degree", names.len())))?;
    for ((at, got), want) in names.iter().zip(property_names(sh_degree)) {
        if *got != want {
            return Err(Error::parse(*at, format!("expected property {want:?}, found {got:?}")));
        }
    }

    let header_len = h.pos;
    let stride = names.len() * 4;
    let expected = header_len + count * stride;
    if bytes.len() < expected {
        return Err(Error::parse(bytes.len(), format!("payload truncated: {count} vertices need {expected} bytes")));
    }
    if bytes.len() > expected {
        return Err(Error::parse(expected, "trailing bytes after vertex data"));
    }

    let mut cloud = GaussianCloud::new(sh_degree)?;
    let k = cloud.sh_count();
    let mut at = header_len;
    let mut next = || -> Result<f64> {
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::parse(at, "non-finite value"));
        }
        at += 4;
        Ok(v as f64)
    };
    for _ in 0..count {
        let p = Vector3::new(next()?, next()?, next()?);
        let mut sh = vec![Vector3::zeros(); k];
        sh[0] = Vector3::new(next()?, next()?, next()?);
        for c in 0..3 {
            for coeff in sh.iter_mut().skip(1) {
                coeff[c] = next()?;
            }
        }
        let opacity = next()?;
        let s = Vector3::new(next()?, next()?, next()?);
        let q = Vector4::new(next()?, next()?, next()?, next()?);
        cloud.positions.push(p);
        cloud.sh_coeffs.extend(sh);
        cloud.opacity_logits.push(opacity);
        cloud.log_scales.push(s);
        cloud.rotations.push(q);
    }
    Ok(cloud)
}

pub fn save_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    write_atomic(path, &encode_ply(cloud))
}

pub fn load_ply(path: &Path) -> Result<GaussianCloud> {
    decode_ply(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_cloud_is_a_valid_file() {
        let cloud = GaussianCloud::new(0).unwrap();
        let bytes = encode_ply(&cloud);
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\n"));
        assert!(text.ends_with("property float rot_3\nend_header\n"));
        assert_eq!(decode_ply(&bytes).unwrap(), cloud);
    }

    #[test]
    fn degree_is_inferred_from_rest_count() {
        for d in 0..=3 {
            let cloud = GaussianCloud::new(d).unwrap();
            assert_eq!(decode_ply(&encode_ply(&cloud)).unwrap().sh_degree(), d);
        }
        assert_eq!(property_names(3).len(), 59);
    }

    #[test]
    fn shuffled_properties_rejected() {
        let text = String::from_utf8(encode_ply(&GaussianCloud::new(0).unwrap())).unwrap();
        let swapped = text.replace("property float y\nproperty float z\n", "property float z\nproperty float y\n");
        let err = decode_ply(swapped.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn nan_and_truncation_report_offsets() {
        let mut cloud = GaussianCloud::new(0).unwrap();
        cloud.positions.push(Vector3::zeros());
        cloud.rotations.push(Vector4::new(1.0, 0.0, 0.0, 0.0));
        cloud.log_scales.push(Vector3::zeros());
        cloud.opacity_logits.push(0.0);
        cloud.sh_coeffs.push(Vector3::zeros());
        let bytes = encode_ply(&cloud);
        let header = bytes.len() - 14 * 4;

        let mut nan = bytes.clone();
        nan[header + 8..header + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode_ply(&nan) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, header + 8),
            other => panic!("{other:?}"),
        }
        match decode_ply(&bytes[..bytes.len() - 1]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, bytes.len() - 1),
            other => panic!("{other:?}"),
        }
    }
}
