//! Unit conversions. Simulation state is SI; everything crossing a public
//! interface is imperial (miles, feet, mph).

pub const FT_PER_MILE: f64 = 5280.0;
pub const M_PER_FT: f64 = 0.3048;
pub const M_PER_MILE: f64 = FT_PER_MILE * M_PER_FT;
pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[inline]
pub fn mph_to_mps(mph: f64) -> f64 {
    mph * M_PER_MILE / SECONDS_PER_HOUR
}

#[inline]
pub fn mps_to_mph(mps: f64) -> f64 {
    mps * SECONDS_PER_HOUR / M_PER_MILE
}

#[inline]
pub fn mph_to_fps(mph: f64) -> f64 {
    mph * FT_PER_MILE / SECONDS_PER_HOUR
}

#[inline]
pub fn miles_to_m(miles: f64) -> f64 {
    miles * M_PER_MILE
}

#[inline]
pub fn m_to_miles(m: f64) -> f64 {
    m / M_PER_MILE
}

#[inline]
pub fn ft_to_m(ft: f64) -> f64 {
    ft * M_PER_FT
}

#[inline]
pub fn m_to_ft(m: f64) -> f64 {
    m / M_PER_FT
}
