//! Measurement logs on disk: one CSV per sensor stream plus a `config.json`
//! sidecar holding the [`SimConfig`] that produced them.
//!
//! Floats are written with 17 significant digits, so a write/read cycle is
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preintegration::{CameraMode, Window};
use crate::simulation::{BearingSample, ImuSample, SimConfig, SimulatedTrial};

pub const IMU_HEADER: [&str; 7] = [
    "t_s", "wx_radps", "wy_radps", "wz_radps", "ax_mps2", "ay_mps2", "az_mps2",
];
pub const BEARING_HEADER: [&str; 4] = ["t_s", "dx", "dy", "dz"];

pub const IMU1_FILE: &str = "imu1.csv";
pub const IMU2_FILE: &str = "imu2.csv";
pub const BEARINGS1_FILE: &str = "bearings1.csv";
pub const BEARINGS2_FILE: &str = "bearings2.csv";
pub const CONFIG_FILE: &str = "config.json";

/// The four sensor streams of a trial, without ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementLog {
    pub config: SimConfig,
    pub imu1: Vec<ImuSample>,
    pub imu2: Vec<ImuSample>,
    /// Agent 1 observing agent 2, unit vectors in agent 1's frame.
    pub bearings1: Vec<BearingSample>,
    pub bearings2: Vec<BearingSample>,
}

impl From<&SimulatedTrial> for MeasurementLog {
    fn from(t: &SimulatedTrial) -> Self {
        Self {
            config: t.config.clone(),
            imu1: t.imu1.clone(),
            imu2: t.imu2.clone(),
            bearings1: t.bearings1.clone(),
            bearings2: t.bearings2.clone(),
        }
    }
}

impl MeasurementLog {
    /// Window `[t_a, t_b]`; the second camera is used in dual mode only.
    pub fn window(&self, t_a: f64, t_b: f64, mode: CameraMode) -> Result<Window<f64>> {
        Window::new(
            t_a,
            t_b,
            self.imu1.clone(),
            self.imu2.clone(),
            &self.bearings1,
            match mode {
                CameraMode::SingleCamera => None,
                CameraMode::DualSynchronized => Some(&self.bearings2),
            },
        )
    }

    /// Writes the five files into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_imu(&dir.join(IMU1_FILE), &self.imu1)?;
        write_imu(&dir.join(IMU2_FILE), &self.imu2)?;
        write_bearings(&dir.join(BEARINGS1_FILE), &self.bearings1)?;
        write_bearings(&dir.join(BEARINGS2_FILE), &self.bearings2)?;
        let f = BufWriter::new(File::create(dir.join(CONFIG_FILE))?);
        serde_json::to_writer_pretty(f, &self.config).map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }

    /// Reads a log written by [`write_dir`](Self::write_dir). A missing
    /// `config.json` falls back to the default config.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(CONFIG_FILE);
        let config = if cfg_path.exists() {
            read_config(&cfg_path)?
        } else {
            SimConfig::default()
        };
        Ok(Self {
            config,
            imu1: read_imu(&dir.join(IMU1_FILE))?,
            imu2: read_imu(&dir.join(IMU2_FILE))?,
            bearings1: read_bearings(&dir.join(BEARINGS1_FILE))?,
            bearings2: read_bearings(&dir.join(BEARINGS2_FILE))?,
        })
    }
}

/// A [`SimConfig`] from JSON; absent fields keep their defaults.
pub fn read_config(path: &Path) -> Result<SimConfig> {
    let f = BufReader::new(File::open(path)?);
    let cfg: SimConfig = serde_json::from_reader(f).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io(format!("{}: {e}", path.display()))
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: impl Iterator<Item = [f64; N]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r.map(fmt)).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows<const N: usize>(path: &Path, header: [&str; N]) -> Result<Vec<[f64; N]>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let found: Vec<String> = r
        .headers()
        .map_err(csv_err(path))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if found != header {
        return Err(Error::Parse(format!(
            "{}: expected header {}, found {}",
            path.display(),
            header.join(","),
            found.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != N {
            return Err(Error::Parse(format!(
                "{}: row {} has {} fields",
                path.display(),
                line + 1,
                rec.len()
            )));
        }
        let mut row = [0.0; N];
        for (v, field) in row.iter_mut().zip(rec.iter()) {
            *v = field
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("{}: row {}: {e}", path.display(), line + 1)))?;
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<()> {
    write_rows(
        path,
        IMU_HEADER,
        samples
            .iter()
            .map(|s| [s.t, s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z]),
    )
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>> {
    Ok(read_rows(path, IMU_HEADER)?
        .into_iter()
        .map(|r| ImuSample {
            t: r[0],
            gyro: Vector3::new(r[1], r[2], r[3]),
            accel: Vector3::new(r[4], r[5], r[6]),
        })
        .collect())
}

pub fn write_bearings(path: &Path, samples: &[BearingSample]) -> Result<()> {
    write_rows(
        path,
        BEARING_HEADER,
        samples
            .iter()
            .map(|s| [s.t, s.direction.x, s.direction.y, s.direction.z]),
    )
}

/// Directions are taken as given; they are not renormalized.
pub fn read_bearings(path: &Path) -> Result<Vec<BearingSample>> {
    Ok(read_rows(path, BEARING_HEADER)?
        .into_iter()
        .map(|r| BearingSample {
            t: r[0],
            direction: Vector3::new(r[1], r[2], r[3]),
        })
        .collect())
}
