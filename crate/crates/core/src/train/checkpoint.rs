//! Checkpoint serialization: magic "MVCG", u32 version, config JSON, training
//! counters, then named little-endian parameter and optimizer arrays behind a
//! length-prefixed manifest. Writes are atomic (temp file + rename).

use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MVCG";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct CheckpointData {
    pub config: TrainConfig,
    pub step: u64,
    /// 1 or 2
    pub stage: u8,
    pub cur_res: u32,
    pub fade_alpha: f64,
    pub dataset_epoch: u64,
    pub dataset_cursor: u64,
    pub g_params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub d_params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub adam_g_step: u64,
    pub adam_g: Vec<(String, Vec<f64>, Vec<f64>)>,
    pub adam_d_step: u64,
    pub adam_d: Vec<(String, Vec<f64>, Vec<f64>)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, xs: &[f32]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn f64s(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("invalid utf-8 in manifest".into()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn write_params(w: &mut Writer, params: &[(String, Vec<usize>, Vec<f32>)]) {
    w.u32(params.len() as u32);
    for (name, shape, _) in params {
        w.str(name);
        w.u32(shape.len() as u32);
        for &d in shape {
            w.u32(d as u32);
        }
    }
    for (_, _, data) in params {
        w.f32s(data);
    }
}

fn read_params(r: &mut Reader) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
    let count = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        manifest.push((name, shape));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let n: usize = shape.iter().product();
        let data = r.f32s(n)?;
        out.push((name, shape, data));
    }
    Ok(out)
}

fn write_adam(w: &mut Writer, step: u64, moments: &[(String, Vec<f64>, Vec<f64>)]) {
    w.u64(step);
    w.u32(moments.len() as u32);
    for (name, m, v) in moments {
        w.str(name);
        w.u64(m.len() as u64);
        w.f64s(m);
        w.f64s(v);
    }
}

fn read_adam(r: &mut Reader) -> Result<(u64, Vec<(String, Vec<f64>, Vec<f64>)>)> {
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.str()?;
        let n = r.u64()? as usize;
        let m = r.f64s(n)?;
        let v = r.f64s(n)?;
        out.push((name, m, v));
    }
    Ok((step, out))
}

pub fn save_checkpoint(data: &CheckpointData, path: &Path) -> Result<()> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let json = serde_json::to_string(&data.config)
        .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?;
    w.str(&json);
    w.u64(data.step);
    w.0.push(data.stage);
    w.u32(data.cur_res);
    w.f64(data.fade_alpha);
    w.u64(data.dataset_epoch);
    w.u64(data.dataset_cursor);
    write_params(&mut w, &data.g_params);
    write_params(&mut w, &data.d_params);
    write_adam(&mut w, data.adam_g_step, &data.adam_g);
    write_adam(&mut w, data.adam_d_step, &data.adam_d);

    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &w.0)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let buf = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let json = r.str()?;
    let config: TrainConfig = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("config deserialization: {e}")))?;
    let step = r.u64()?;
    let stage = r.take(1)?[0];
    let cur_res = r.u32()?;
    let fade_alpha = r.f64()?;
    let dataset_epoch = r.u64()?;
    let dataset_cursor = r.u64()?;
    let g_params = read_params(&mut r)?;
    let d_params = read_params(&mut r)?;
    let (adam_g_step, adam_g) = read_adam(&mut r)?;
    let (adam_d_step, adam_d) = read_adam(&mut r)?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(CheckpointData {
        config,
        step,
        stage,
        cur_res,
        fade_alpha,
        dataset_epoch,
        dataset_cursor,
        g_params,
        d_params,
        adam_g_step,
        adam_g,
        adam_d_step,
        adam_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CheckpointData {
        CheckpointData {
            config: TrainConfig::desk(),
            step: 42,
            stage: 1,
            cur_res: 32,
            fade_alpha: 1.0,
            dataset_epoch: 3,
            dataset_cursor: 17,
            g_params: vec![
                ("g_m.layer0.w".into(), vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]),
                ("g_m.layer0.b".into(), vec![1, 2], vec![0.0, -1.5]),
            ],
            d_params: vec![("d.head.w".into(), vec![2, 1], vec![0.25, 0.5])],
            adam_g_step: 42,
            adam_g: vec![("g_m.layer0.w".into(), vec![0.1; 4], vec![0.2; 4])],
            adam_d_step: 42,
            adam_d: vec![],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join("mvcg_ckpt_test");
        let path = dir.join("a.ckpt");
        let data = sample();
        save_checkpoint(&data, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.config, data.config);
        assert_eq!(back.step, 42);
        assert_eq!(back.g_params, data.g_params);
        assert_eq!(back.d_params, data.d_params);
        assert_eq!(back.adam_g, data.adam_g);
        assert_eq!(back.dataset_cursor, 17);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncated_file_is_a_structured_error() {
        let dir = std::env::temp_dir().join("mvcg_ckpt_trunc");
        let path = dir.join("b.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(_)) => {}
            other => panic!("expected checkpoint error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_wrong_magic_and_version() {
        let dir = std::env::temp_dir().join("mvcg_ckpt_magic");
        let path = dir.join("c.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'M';
        bytes[4] = 9; // version
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn manifest_names_are_unique() {
        let data = sample();
        let mut names: Vec<&str> = data
            .g_params
            .iter()
            .chain(data.d_params.iter())
            .map(|(n, _, _)| n.as_str())
            .collect();
        let before = names.len();
        names.sort();
        names.dedup();
        assert_eq!(before, names.len());
    }
}
