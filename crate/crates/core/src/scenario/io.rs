//! Binary scenario files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "AMPSCN01"                      8-byte magic
//! u32 N, u32 M, u32 Q
//! f64 noise variance
//! U (Q×N), X (N×M), Y (Q×M)       row-major, each entry (f64 re, f64 im)
//! activity                        ceil(N/8) bytes, user n at bit n%8 of byte n/8
//! N path records                  u32 count, then count × (f64 f, f64 re, f64 im)
//! u32 len, len bytes              optional: SystemConfig as TOML
//! ```
//!
//! Readers that stop after the path records see a complete instance; the
//! trailing config block restores the generation metadata.

use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use ndarray::Array2;

use super::{Path, Scenario, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::C64;

pub const MAGIC: &[u8; 8] = b"AMPSCN01";

pub fn write_scenario<W: Write>(s: &Scenario, mut w: W) -> Result<()> {
    let (n, m, q) = (s.n_users(), s.n_antennas(), s.pilot_len());
    check_shapes(s)?;
    let mut buf = Vec::with_capacity(64 + 16 * (q * n + n * m + q * m));
    buf.extend_from_slice(MAGIC);
    for d in [n, m, q] {
        let d = u32::try_from(d).map_err(|_| Error::Dimension("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&s.noise_var.to_le_bytes());
    for a in [&s.pilots, &s.truth, &s.observation] {
        for z in a.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    let mut packed = vec![0u8; n.div_ceil(8)];
    for (i, &a) in s.activity.iter().enumerate() {
        if a {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    buf.extend_from_slice(&packed);
    for user in &s.paths {
        buf.extend_from_slice(&(user.len() as u32).to_le_bytes());
        for p in user {
            buf.extend_from_slice(&p.frequency.to_le_bytes());
            buf.extend_from_slice(&p.gain.re.to_le_bytes());
            buf.extend_from_slice(&p.gain.im.to_le_bytes());
        }
    }
    let cfg = s.config.to_toml_string();
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_scenario(s: &Scenario, path: impl AsRef<FsPath>) -> Result<()> {
    let f = fs::File::create(path)?;
    write_scenario(s, std::io::BufWriter::new(f))
}

pub fn load_scenario(path: impl AsRef<FsPath>) -> Result<Scenario> {
    read_scenario(&fs::read(path)?)
}

fn check_shapes(s: &Scenario) -> Result<()> {
    let (n, m, q) = (s.n_users(), s.n_antennas(), s.pilot_len());
    let ok = s.pilots.dim() == (q, n)
        && s.observation.dim() == (q, m)
        && s.activity.len() == n
        && s.paths.len() == n;
    if ok {
        Ok(())
    } else {
        Err(Error::Dimension("scenario arrays disagree on N, M, Q".into()))
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let out = &self.data[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated(format!(
                "needed {len} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.data.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<C64>> {
        let bytes = self.take(rows * cols * 16, what)?;
        let vals: Vec<C64> = bytes
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).expect("length checked"))
    }

    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }
}

pub fn read_scenario(data: &[u8]) -> Result<Scenario> {
    let mut c = Cursor { data, pos: 0 };
    let magic = c.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let n = c.u32("N")? as usize;
    let m = c.u32("M")? as usize;
    let q = c.u32("Q")? as usize;
    if n == 0 || m == 0 || q == 0 {
        return Err(Error::Format(format!("zero dimension in header (N={n}, M={m}, Q={q})")));
    }
    let noise_var = c.f64("noise variance")?;
    if !(noise_var >= 0.0) {
        return Err(Error::Format(format!("invalid noise variance {noise_var}")));
    }
    // refuse absurd headers before allocating
    let need = 16u128 * (q as u128 * n as u128 + n as u128 * m as u128 + q as u128 * m as u128);
    if need > c.remaining() as u128 {
        return Err(Error::Truncated(format!(
            "header promises {need} array bytes, file has {} left",
            c.remaining()
        )));
    }
    let pilots = c.matrix(q, n, "U")?;
    let truth = c.matrix(n, m, "X")?;
    let observation = c.matrix(q, m, "Y")?;
    let packed = c.take(n.div_ceil(8), "activity")?;
    let activity: Vec<bool> = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();

    let mut paths = Vec::with_capacity(n);
    for (user, &active) in activity.iter().enumerate() {
        let count = c.u32("path count")? as usize;
        if count > m {
            return Err(Error::Dimension(format!("user {user} has {count} paths but M = {m}")));
        }
        if active != (count > 0) {
            return Err(Error::Inconsistent(format!(
                "user {user}: activity flag {active} but {count} paths"
            )));
        }
        let mut user_paths = Vec::with_capacity(count);
        for _ in 0..count {
            let frequency = c.f64("path frequency")?;
            let re = c.f64("path gain")?;
            let im = c.f64("path gain")?;
            if !(0.0..1.0).contains(&frequency) {
                return Err(Error::Inconsistent(format!("user {user}: frequency {frequency} outside [0,1)")));
            }
            user_paths.push(Path { frequency, gain: C64::new(re, im) });
        }
        paths.push(user_paths);
    }

    let config = if c.remaining() == 0 {
        SystemConfig { n_users: n, n_antennas: m, pilot_len: q, ..Default::default() }
    } else {
        let len = c.u32("config length")? as usize;
        let text = c.take(len, "config block")?;
        let text = std::str::from_utf8(text).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
        let cfg: SystemConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config block: {e}")))?;
        if (cfg.n_users, cfg.n_antennas, cfg.pilot_len) != (n, m, q) {
            return Err(Error::Dimension(format!(
                "config block dims ({}, {}, {}) differ from header ({n}, {m}, {q})",
                cfg.n_users, cfg.n_antennas, cfg.pilot_len
            )));
        }
        if c.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", c.remaining())));
        }
        cfg
    };

    Ok(Scenario { config, pilots, truth, observation, activity, paths, noise_var })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::generate_scenario;

    fn sample() -> Scenario {
        let cfg = SystemConfig {
            n_users: 21,
            n_antennas: 6,
            pilot_len: 9,
            activity_prob: 0.4,
            seed: 17,
            snr_override_db: Some(15.0),
            ..Default::default()
        };
        generate_scenario(&cfg).unwrap()
    }

    fn encode(s: &Scenario) -> Vec<u8> {
        let mut v = Vec::new();
        write_scenario(s, &mut v).unwrap();
        v
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample();
        let back = read_scenario(&encode(&s)).unwrap();
        assert_eq!(back, s);
        let bits = |a: &Array2<C64>| a.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&back.observation), bits(&s.observation));
        assert_eq!(back.noise_var.to_bits(), s.noise_var.to_bits());
    }

    #[test]
    fn file_round_trip() {
        let s = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        save_scenario(&s, &p).unwrap();
        assert_eq!(load_scenario(&p).unwrap(), s);
    }

    #[test]
    fn header_layout() {
        let s = sample();
        let b = encode(&s);
        assert_eq!(&b[..8], b"AMPSCN01");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 21);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 9);
        assert_eq!(f64::from_le_bytes(b[20..28].try_into().unwrap()), s.noise_var);
        let u00 = f64::from_le_bytes(b[28..36].try_into().unwrap());
        assert_eq!(u00, s.pilots[[0, 0]].re);
    }

    #[test]
    fn truncation_is_detected() {
        let b = encode(&sample());
        for cut in [4, 20, 100, b.len() / 2, b.len() - 3] {
            assert!(matches!(read_scenario(&b[..cut]), Err(Error::Truncated(_))), "cut at {cut}");
        }
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut b = encode(&sample());
        b[0] = b'X';
        assert!(matches!(read_scenario(&b), Err(Error::Format(_))));
    }

    #[test]
    fn config_dims_must_match_header() {
        let mut s = sample();
        s.config.n_antennas = 7;
        let b = encode(&s);
        assert!(matches!(read_scenario(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn config_block_is_optional() {
        let s = sample();
        let b = encode(&s);
        let cfg_len = s.config.to_toml_string().len();
        let stripped = &b[..b.len() - 4 - cfg_len];
        let back = read_scenario(stripped).unwrap();
        assert_eq!(back.observation, s.observation);
        assert_eq!(back.paths, s.paths);
        assert_eq!(back.config.n_users, 21);
    }
}
