//! Synthetic paired (image, hourly series, coordinates) samples from a known
//! deterministic law plus noise.
//!
//! The series follows `x_t = B(φ) + A(φ)·cos(2π((h + t) − 15)/24) + ε_t`
//! with `B(φ) = 30 − 0.5|φ|` and `A(φ) = 8 + 0.05|φ|`, hourly over
//! `t ∈ {−47..+12}` around the acquisition hour `h`. Image channel means
//! encode `(φ, h)`: channel 0 is `(φ+60)/120`, channels 1 and 2 are
//! `(sin(2πh/24)+1)/2` and `(cos(2πh/24)+1)/2`, with per-pixel uniform noise.
//! Both modalities therefore carry the full signal, and the ground-truth
//! parameters ride along for oracle checks.

pub mod files;

use crate::error::{Error, Result};
use crate::numkernel::rng::Rng;
use crate::numkernel::tensor::Tensor;

pub const IMG_SIZE: usize = 32;
pub const IMG_CHANNELS: usize = 3;
pub const SERIES_LEN: usize = 60;
/// First timestep of the hourly window relative to acquisition.
pub const SERIES_START: i32 = -47;
pub const LAT_RANGE: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One synthetic paired observation.
#[derive(Debug, Clone)]
pub struct WorldSample {
    pub id: u32,
    /// Latitude φ in degrees, in [−60, 60].
    pub lat: f64,
    /// Acquisition hour h in [0, 24).
    pub hour: f64,
    /// `[32, 32, 3]` in [0, 1], values exactly representable in f32.
    pub image: Tensor,
    /// 60 hourly values covering t ∈ {−47..+12}.
    pub series: Vec<f64>,
    /// 1°-resolution coordinate tokens.
    pub lat_bin: u32,
    pub lon_bin: u32,
    pub split: Split,
    /// Ground-truth B(φ), retained for oracles.
    pub offset: f64,
    /// Ground-truth A(φ).
    pub amplitude: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub count: usize,
    pub noise_sigma: f64,
    pub pixel_noise: f64,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            count: 1000,
            noise_sigma: 0.5,
            pixel_noise: 0.05,
            seed: 0,
            train_frac: 0.8,
            val_frac: 0.1,
            test_frac: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_frac + self.val_frac + self.test_frac;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("split fractions sum to {sum}, expected 1")));
        }
        if self.count == 0 {
            return Err(Error::contract("sample count must be positive"));
        }
        Ok(())
    }

    fn split_of(&self, id: usize) -> Split {
        let n_train = (self.count as f64 * self.train_frac).floor() as usize;
        let n_val = (self.count as f64 * self.val_frac).floor() as usize;
        if id < n_train {
            Split::Train
        } else if id < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

pub fn temperature_offset(lat: f64) -> f64 {
    30.0 - 0.5 * lat.abs()
}

pub fn temperature_amplitude(lat: f64) -> f64 {
    8.0 + 0.05 * lat.abs()
}

/// Noise-free series value at relative hour `t`.
pub fn true_series_value(lat: f64, hour: f64, t: i32) -> f64 {
    let b = temperature_offset(lat);
    let a = temperature_amplitude(lat);
    b + a * (2.0 * std::f64::consts::PI * ((hour + t as f64) - 15.0) / 24.0).cos()
}

/// Noise-free image channel means for `(φ, h)`.
pub fn true_channel_means(lat: f64, hour: f64) -> [f64; 3] {
    let phase = 2.0 * std::f64::consts::PI * hour / 24.0;
    [(lat + LAT_RANGE) / (2.0 * LAT_RANGE), (phase.sin() + 1.0) / 2.0, (phase.cos() + 1.0) / 2.0]
}

/// Hourly series for `(φ, h)` with noise σ, drawn from `rng`.
pub fn synth_series(lat: f64, hour: f64, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    (0..SERIES_LEN)
        .map(|i| true_series_value(lat, hour, SERIES_START + i as i32) + sigma * rng.normal())
        .collect()
}

/// Image whose channel means encode `(φ, h)`; pixel values are rounded
/// through f32 so the DTSR on-disk form is bit-exact.
pub fn synth_image(lat: f64, hour: f64, pixel_noise: f64, rng: &mut Rng) -> Tensor {
    let means = true_channel_means(lat, hour);
    let mut data = vec![0.0f64; IMG_SIZE * IMG_SIZE * IMG_CHANNELS];
    for px in 0..IMG_SIZE * IMG_SIZE {
        for (c, &m) in means.iter().enumerate() {
            let noise = rng.uniform_in(-pixel_noise, pixel_noise);
            let v = (m + noise).clamp(0.0, 1.0);
            data[px * IMG_CHANNELS + c] = v as f32 as f64;
        }
    }
    Tensor::new(vec![IMG_SIZE, IMG_SIZE, IMG_CHANNELS], data).expect("image shape")
}

/// Generates sample `id` from its dedicated substream of `cfg.seed`.
pub fn gen_sample(cfg: &GeneratorConfig, id: usize) -> WorldSample {
    let mut rng = Rng::substream(cfg.seed, id as u64);
    let lat = rng.uniform_in(-LAT_RANGE, LAT_RANGE);
    let hour = rng.uniform_in(0.0, 24.0);
    let lon = rng.uniform_in(0.0, 360.0);
    let series = synth_series(lat, hour, cfg.noise_sigma, &mut rng);
    let image = synth_image(lat, hour, cfg.pixel_noise, &mut rng);
    WorldSample {
        id: id as u32,
        lat,
        hour,
        image,
        series,
        lat_bin: ((lat + LAT_RANGE).floor() as u32).min(2 * LAT_RANGE as u32 - 1),
        lon_bin: (lon.floor() as u32).min(359),
        split: cfg.split_of(id),
        offset: temperature_offset(lat),
        amplitude: temperature_amplitude(lat),
    }
}

/// The full dataset, ordered by id.
pub fn gen_all(cfg: &GeneratorConfig) -> Result<Vec<WorldSample>> {
    cfg.validate()?;
    Ok(crate::numkernel::pool::ordered_map_indices(cfg.count, |id| gen_sample(cfg, id)))
}

/// Daily profile over a 40-day window (29 days before and 10 after the
/// acquisition day): per-day minimum, maximum, and mean of the same hourly
/// law extended across the window.
#[derive(Debug, Clone)]
pub struct DailyProfile {
    /// Day offsets, −29..=10.
    pub days: Vec<i32>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn synth_daily_profile(lat: f64, hour: f64, sigma: f64, rng: &mut Rng) -> DailyProfile {
    let mut out = DailyProfile { days: Vec::new(), min: Vec::new(), max: Vec::new(), mean: Vec::new() };
    for day in -29..=10i32 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for k in 0..24 {
            // absolute local time τ within day `day`; t = τ − h
            let tau = day as f64 * 24.0 + k as f64;
            let t = tau - hour;
            let b = temperature_offset(lat);
            let a = temperature_amplitude(lat);
            let v = b
                + a * (2.0 * std::f64::consts::PI * ((hour + t) - 15.0) / 24.0).cos()
                + sigma * rng.normal();
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        out.days.push(day);
        out.min.push(lo);
        out.max.push(hi);
        out.mean.push(sum / 24.0);
    }
    out
}

/// Aggregates an hourly window (values at t = start..) into per-day
/// min/max/mean for every fully covered local day. Day `d` covers absolute
/// hours `[24d, 24(d+1))` where absolute hour = `h + t`.
pub fn aggregate_daily(series: &[f64], start: i32, hour: f64) -> Vec<(i32, f64, f64, f64)> {
    let mut by_day: std::collections::BTreeMap<i32, Vec<f64>> = Default::default();
    for (i, &v) in series.iter().enumerate() {
        let tau = hour + (start + i as i32) as f64;
        let day = (tau / 24.0).floor() as i32;
        by_day.entry(day).or_default().push(v);
    }
    by_day
        .into_iter()
        .filter(|(_, vs)| vs.len() == 24)
        .map(|(d, vs)| {
            let lo = vs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = vs.iter().sum::<f64>() / vs.len() as f64;
            (d, lo, hi, mean)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn law_spot_values() {
        // φ=0, h=15, t=0, ε=0 -> 30 + 8 = 38
        assert!((true_series_value(0.0, 15.0, 0) - 38.0).abs() < 1e-12);
        // φ=60 -> B=0, A=11; extremes ±11
        assert_eq!(temperature_offset(60.0), 0.0);
        assert_eq!(temperature_amplitude(60.0), 11.0);
        let vals: Vec<f64> = (-47..=12).map(|t| true_series_value(60.0, 3.0, t)).collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= -11.0 - 1e-9 && hi <= 11.0 + 1e-9);
    }

    #[test]
    fn image_channel_mean_encodes_lat() {
        let cfg = GeneratorConfig { seed: 5, ..Default::default() };
        let mut rng = Rng::substream(cfg.seed, 1);
        let img = synth_image(0.0, 9.0, cfg.pixel_noise, &mut rng);
        let mut mean0 = 0.0;
        for px in 0..IMG_SIZE * IMG_SIZE {
            mean0 += img.data()[px * IMG_CHANNELS];
        }
        mean0 /= (IMG_SIZE * IMG_SIZE) as f64;
        assert!((mean0 - 0.5).abs() < 0.01, "channel-0 mean {mean0}");
    }

    #[test]
    fn identifiability_from_noiseless_image() {
        // brute-force grid inversion of channel means
        for &(lat, hour) in &[(13.7, 4.3), (-42.0, 18.9), (59.0, 0.2)] {
            let mut rng = Rng::seed_from(0);
            let img = synth_image(lat, hour, 0.0, &mut rng);
            let n = (IMG_SIZE * IMG_SIZE) as f64;
            let mut means = [0.0; 3];
            for px in 0..IMG_SIZE * IMG_SIZE {
                for (c, m) in means.iter_mut().enumerate() {
                    *m += img.data()[px * IMG_CHANNELS + c] / n;
                }
            }
            let mut best_lat = f64::NAN;
            let mut best_err = f64::INFINITY;
            let mut probe = -LAT_RANGE;
            while probe <= LAT_RANGE {
                let e = (true_channel_means(probe, hour)[0] - means[0]).powi(2);
                if e < best_err {
                    best_err = e;
                    best_lat = probe;
                }
                probe += 0.05;
            }
            let mut best_hour = f64::NAN;
            let mut best_herr = f64::INFINITY;
            let mut hp = 0.0;
            while hp < 24.0 {
                let m = true_channel_means(0.0, hp);
                let e = (m[1] - means[1]).powi(2) + (m[2] - means[2]).powi(2);
                if e < best_herr {
                    best_herr = e;
                    best_hour = hp;
                }
                hp += 0.01;
            }
            assert!((best_lat - lat).abs() <= 0.5, "lat {lat} recovered {best_lat}");
            assert!((best_hour - hour).abs() <= 0.1, "hour {hour} recovered {best_hour}");
        }
    }

    #[test]
    fn split_counts() {
        let cfg = GeneratorConfig { count: 1000, ..Default::default() };
        let samples = gen_all(&cfg).unwrap();
        let count = |s: Split| samples.iter().filter(|x| x.split == s).count();
        assert_eq!(count(Split::Train), 800);
        assert_eq!(count(Split::Val), 100);
        assert_eq!(count(Split::Test), 100);
    }

    #[test]
    fn generation_deterministic_per_id() {
        let cfg = GeneratorConfig { seed: 42, count: 10, ..Default::default() };
        let a = gen_sample(&cfg, 3);
        let b = gen_sample(&cfg, 3);
        assert_eq!(a.lat.to_bits(), b.lat.to_bits());
        assert_eq!(a.series, b.series);
        assert_eq!(a.image.data(), b.image.data());
    }

    #[test]
    fn value_range_spans_law() {
        let cfg = GeneratorConfig { seed: 1, count: 400, ..Default::default() };
        let samples = gen_all(&cfg).unwrap();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &samples {
            for &v in &s.series {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        assert!((-16.0..=-8.0).contains(&lo), "min {lo}");
        assert!((35.0..=42.0).contains(&hi), "max {hi}");
    }

    #[test]
    fn daily_aggregation_full_days_only() {
        // h=12: window −47..12 spans absolute hours −35..24; the fully
        // covered local days are −1 (hours −24..−1) and 0 (hours 0..23).
        let series: Vec<f64> = (0..SERIES_LEN).map(|i| i as f64).collect();
        let days = aggregate_daily(&series, SERIES_START, 12.0);
        let ids: Vec<i32> = days.iter().map(|d| d.0).collect();
        assert_eq!(ids, vec![-1, 0]);
        let profile = synth_daily_profile(10.0, 6.0, 0.0, &mut Rng::seed_from(0));
        assert_eq!(profile.days.len(), 40);
        for i in 0..40 {
            assert!(profile.min[i] <= profile.mean[i] && profile.mean[i] <= profile.max[i]);
        }
    }
}
