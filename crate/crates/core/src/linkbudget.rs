//! Downlink budget for a LEO satellite pass.
//!
//! Geometry (slant range from elevation), thermal noise `N = k·T·B`,
//! free-space path loss and the resulting dB-domain SNR. The SNR then fixes
//! the per-component noise variance used by the channel layer.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Mean Earth radius used for slant-range geometry, km.
pub const EARTH_RADIUS_KM: f64 = 6378.0;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380649e-23;
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkBudgetError {
    #[error("elevation must lie in (0, 90] degrees, got {0}")]
    Elevation(f64),
    #[error("{name} must be strictly positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("noise figure must be >= 0 dB, got {0}")]
    NoiseFigure(f64),
}

/// Orbit and RF parameters of the downlink.
///
/// Defaults reproduce the reference system: 150 km orbit, 2150 MHz carrier,
/// 1 W transmit power, 6 dBi satellite antenna, 35 dBi ground antenna,
/// 750 kHz bandwidth and a 2 dB receiver noise figure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    pub orbit_height_km: f64,
    pub carrier_hz: f64,
    pub tx_power_w: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub antenna_temp_k: f64,
    pub ref_temp_k: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            orbit_height_km: 150.0,
            carrier_hz: 2150e6,
            tx_power_w: 1.0,
            tx_gain_dbi: 6.0,
            rx_gain_dbi: 35.0,
            bandwidth_hz: 750e3,
            noise_figure_db: 2.0,
            antenna_temp_k: 290.0,
            ref_temp_k: 290.0,
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), LinkBudgetError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(LinkBudgetError::NonPositive { name, value })
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), LinkBudgetError> {
        positive("orbit_height_km", self.orbit_height_km)?;
        positive("carrier_hz", self.carrier_hz)?;
        positive("tx_power_w", self.tx_power_w)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("antenna_temp_k", self.antenna_temp_k)?;
        positive("ref_temp_k", self.ref_temp_k)?;
        if !self.tx_gain_dbi.is_finite() {
            return Err(LinkBudgetError::NonPositive { name: "tx_gain_dbi", value: self.tx_gain_dbi });
        }
        if !self.rx_gain_dbi.is_finite() {
            return Err(LinkBudgetError::NonPositive { name: "rx_gain_dbi", value: self.rx_gain_dbi });
        }
        if !(self.noise_figure_db.is_finite() && self.noise_figure_db >= 0.0) {
            return Err(LinkBudgetError::NoiseFigure(self.noise_figure_db));
        }
        Ok(())
    }

    /// Convenience wrapper around [`snr`].
    pub fn snr_at(&self, elevation_deg: f64) -> Result<SnrReport, LinkBudgetError> {
        snr(self, elevation_deg)
    }
}

/// Thermal noise of the receive chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalNoise {
    /// Receiver equivalent noise temperature `T_e`, K.
    pub receiver_temp_k: f64,
    /// System noise temperature `T = T_a + T_e`, K.
    pub system_temp_k: f64,
    pub power_w: f64,
    pub power_dbw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub elevation_deg: f64,
    pub slant_range_km: f64,
    pub path_loss_db: f64,
    pub noise_power_dbw: f64,
    pub snr_db: f64,
}

impl SnrReport {
    pub const CSV_HEADER: &'static str = "elevation_deg,slant_km,loss_db,noise_dbw,snr_db";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.elevation_deg, self.slant_range_km, self.path_loss_db, self.noise_power_dbw, self.snr_db
        )
    }
}

impl std::fmt::Display for SnrReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "elevation      {:>12.4} deg", self.elevation_deg)?;
        writeln!(f, "slant range    {:>12.4} km", self.slant_range_km)?;
        writeln!(f, "path loss      {:>12.4} dB", self.path_loss_db)?;
        writeln!(f, "noise power    {:>12.4} dBW", self.noise_power_dbw)?;
        write!(f, "SNR            {:>12.4} dB", self.snr_db)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Distance between ground station and satellite seen at `elevation_deg`.
pub fn slant_range(elevation_deg: f64, orbit_height_km: f64) -> Result<f64, LinkBudgetError> {
    if !(elevation_deg > 0.0 && elevation_deg <= 90.0) {
        return Err(LinkBudgetError::Elevation(elevation_deg));
    }
    positive("orbit_height_km", orbit_height_km)?;
    let eps = elevation_deg.to_radians();
    let ratio = (orbit_height_km + EARTH_RADIUS_KM) / EARTH_RADIUS_KM;
    let cos_e = eps.cos();
    let d = EARTH_RADIUS_KM * ((ratio * ratio - cos_e * cos_e).sqrt() - eps.sin());
    // at zenith the closed form loses a few ulps; the exact value is h
    Ok(if elevation_deg == 90.0 { orbit_height_km } else { d.max(orbit_height_km) })
}

pub fn thermal_noise(params: &LinkParams) -> Result<ThermalNoise, LinkBudgetError> {
    params.validate()?;
    let noise_factor = db_to_linear(params.noise_figure_db);
    let receiver_temp_k = params.ref_temp_k * (noise_factor - 1.0);
    let system_temp_k = params.antenna_temp_k + receiver_temp_k;
    let power_w = BOLTZMANN * system_temp_k * params.bandwidth_hz;
    Ok(ThermalNoise { receiver_temp_k, system_temp_k, power_w, power_dbw: linear_to_db(power_w) })
}

/// Free-space path loss `20·log10(4π·d·f/c)` with `d` in km.
pub fn path_loss_friis(distance_km: f64, carrier_hz: f64) -> Result<f64, LinkBudgetError> {
    positive("distance_km", distance_km)?;
    positive("carrier_hz", carrier_hz)?;
    Ok(20.0 * (4.0 * PI * distance_km * 1e3 * carrier_hz / SPEED_OF_LIGHT).log10())
}

pub fn snr(params: &LinkParams, elevation_deg: f64) -> Result<SnrReport, LinkBudgetError> {
    params.validate()?;
    let slant_range_km = slant_range(elevation_deg, params.orbit_height_km)?;
    let path_loss_db = path_loss_friis(slant_range_km, params.carrier_hz)?;
    let noise = thermal_noise(params)?;
    let tx_dbw = linear_to_db(params.tx_power_w);
    let snr_db = tx_dbw + params.tx_gain_dbi + params.rx_gain_dbi - path_loss_db - noise.power_dbw;
    Ok(SnrReport { elevation_deg, slant_range_km, path_loss_db, noise_power_dbw: noise.power_dbw, snr_db })
}

/// Per-component noise variance `σ² = P_sig / (2·10^(SNR/10))`.
///
/// Real and imaginary noise parts each get variance σ², so the total complex
/// noise power is `2σ² = P_sig / SNR_lin`.
pub fn noise_sigma_squared(snr_db: f64, signal_power: f64) -> f64 {
    signal_power / (2.0 * db_to_linear(snr_db))
}
