//! Serde adapters storing radians in memory and degrees on disk.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(rad: &f64, s: S) -> Result<S::Ok, S::Error> {
    rad.to_degrees().serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    f64::deserialize(d).map(f64::to_radians)
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(rad: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        rad.map(f64::to_degrees).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<f64>::deserialize(d).map(|v| v.map(f64::to_radians))
    }
}
