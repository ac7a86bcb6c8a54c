//! On-disk dataset layout.
//!
//! A dataset directory holds `manifest.csv` (id, latitude, hour, coordinate
//! tokens, split), `series.csv` (`sample_id,timestep,value` rows), and one
//! `img_<id>.dtsr` tensor per sample. Floats print in shortest round-trip
//! form, so re-reading reproduces them bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::io::{load_tensor, save_tensor};
use crate::synthdata::{
    temperature_amplitude, temperature_offset, GeneratorConfig, Split, WorldSample, SERIES_LEN,
    SERIES_START,
};

pub fn write_dataset(dir: &Path, samples: &[WorldSample]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("id,lat,hour,lat_bin,lon_bin,split\n");
    let mut series = String::from("sample_id,timestep,value\n");
    for s in samples {
        writeln!(manifest, "{},{},{},{},{},{}", s.id, s.lat, s.hour, s.lat_bin, s.lon_bin, s.split.as_str())
            .unwrap();
        for (i, v) in s.series.iter().enumerate() {
            writeln!(series, "{},{},{}", s.id, SERIES_START + i as i32, v).unwrap();
        }
        save_tensor(&dir.join(format!("img_{}.dtsr", s.id)), &s.image)?;
    }
    std::fs::write(dir.join("manifest.csv"), manifest).map_err(|e| Error::io(dir.join("manifest.csv"), e))?;
    std::fs::write(dir.join("series.csv"), series).map_err(|e| Error::io(dir.join("series.csv"), e))?;
    Ok(())
}

/// Generates and persists a dataset; returns the in-memory samples.
pub fn gen_dataset(dir: &Path, cfg: &GeneratorConfig) -> Result<Vec<WorldSample>> {
    let samples = crate::synthdata::gen_all(cfg)?;
    write_dataset(dir, &samples)?;
    Ok(samples)
}

pub fn read_dataset(dir: &Path) -> Result<Vec<WorldSample>> {
    let manifest_path = dir.join("manifest.csv");
    let manifest = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut lines = manifest.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if header != "id,lat,hour,lat_bin,lon_bin,split" {
        return Err(Error::Parse { line: 1, msg: format!("unexpected manifest header {header:?}") });
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines {
        let line_1 = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::Parse { line: line_1, msg: format!("expected 6 fields, got {}", f.len()) });
        }
        let parse_err = |what: &str| Error::Parse { line: line_1, msg: format!("bad {what}: {line:?}") };
        let id: u32 = f[0].parse().map_err(|_| parse_err("id"))?;
        let lat: f64 = f[1].parse().map_err(|_| parse_err("lat"))?;
        let hour: f64 = f[2].parse().map_err(|_| parse_err("hour"))?;
        let lat_bin: u32 = f[3].parse().map_err(|_| parse_err("lat_bin"))?;
        let lon_bin: u32 = f[4].parse().map_err(|_| parse_err("lon_bin"))?;
        let split = Split::parse(f[5]).ok_or_else(|| parse_err("split"))?;
        samples.push(WorldSample {
            id,
            lat,
            hour,
            image: load_tensor(&dir.join(format!("img_{id}.dtsr")))?,
            series: Vec::new(),
            lat_bin,
            lon_bin,
            split,
            offset: temperature_offset(lat),
            amplitude: temperature_amplitude(lat),
        });
    }

    let series_path = dir.join("series.csv");
    let series_text = std::fs::read_to_string(&series_path).map_err(|e| Error::io(&series_path, e))?;
    let mut by_id: std::collections::HashMap<u32, usize> =
        samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut lines = series_text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    if header != "sample_id,timestep,value" {
        return Err(Error::Parse { line: 1, msg: format!("unexpected series header {header:?}") });
    }
    for (lineno, line) in lines {
        let line_1 = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Parse { line: line_1, msg: format!("expected 3 fields, got {}", f.len()) });
        }
        let parse_err = |what: &str| Error::Parse { line: line_1, msg: format!("bad {what}: {line:?}") };
        let id: u32 = f[0].parse().map_err(|_| parse_err("sample_id"))?;
        let t: i32 = f[1].parse().map_err(|_| parse_err("timestep"))?;
        let v: f64 = f[2].parse().map_err(|_| parse_err("value"))?;
        let idx = *by_id.get_mut(&id).ok_or_else(|| parse_err("unknown sample_id"))?;
        let slot = (t - SERIES_START) as usize;
        let series = &mut samples[idx].series;
        if series.len() != slot {
            return Err(Error::Parse { line: line_1, msg: format!("out-of-order timestep {t} for sample {id}") });
        }
        series.push(v);
    }
    for s in &samples {
        if s.series.len() != SERIES_LEN {
            return Err(Error::Parse {
                line: 0,
                msg: format!("sample {} has {} series values, expected {SERIES_LEN}", s.id, s.series.len()),
            });
        }
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig { count: 6, seed: 11, ..Default::default() };
        let written = gen_dataset(dir.path(), &cfg).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), written.len());
        for (a, b) in written.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.lat.to_bits(), b.lat.to_bits());
            assert_eq!(a.hour.to_bits(), b.hour.to_bits());
            assert_eq!(a.split, b.split);
            for (x, y) in a.series.iter().zip(&b.series) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.image.data(), b.image.data());
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig { count: 4, seed: 3, ..Default::default() };
        gen_dataset(d1.path(), &cfg).unwrap();
        gen_dataset(d2.path(), &cfg).unwrap();
        for name in ["manifest.csv", "series.csv", "img_0.dtsr", "img_3.dtsr"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GeneratorConfig { count: 3, seed: 1, ..Default::default() };
        gen_dataset(dir.path(), &cfg).unwrap();
        let series = dir.path().join("series.csv");
        let text = std::fs::read_to_string(&series).unwrap();
        let cut: String = text.lines().take(20).collect::<Vec<_>>().join("\n");
        std::fs::write(&series, cut).unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }

    #[test]
    fn header_only_files_mean_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.csv"), "id,lat,hour,lat_bin,lon_bin,split\n").unwrap();
        std::fs::write(dir.path().join("series.csv"), "sample_id,timestep,value\n").unwrap();
        let samples = read_dataset(dir.path()).unwrap();
        assert!(samples.is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("manifest.csv"),
            "id,lat,hour,lat_bin,lon_bin,split\n0,not_a_float,1.0,10,20,train\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("series.csv"), "sample_id,timestep,value\n").unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
