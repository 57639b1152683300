//! JSON chain description files.
//!
//! Schema (version 1):
//!
//! ```json
//! {
//!   "version": 1,
//!   "joints": [
//!     { "axis": [0, 0, 1], "translation": [0, 0, 0.2], "rpy": [0, 0, 0] }
//!   ],
//!   "bodies": [
//!     { "link": 1, "mass": 9.0, "b_diag": [0.1875, 0.0324, 0.0324],
//!       "com": [0.25, 0, 0], "rpy": [0, 0, 0] }
//!   ],
//!   "frames": [
//!     { "name": "ee", "link": 1, "point": [0.5, 0, 0] }
//!   ]
//! }
//! ```
//!
//! `rpy` are intrinsic roll-pitch-yaw angles in radians; every field with a
//! default may be omitted. Joint `i` connects link `i` to link `i + 1`
//! (link 0 is the fixed base). Body frames sit at the center of mass with
//! axes along the principal directions of the mass distribution.

use std::path::Path;

use nalgebra::{Isometry3, Rotation3, Translation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{KinematicChain, RigidBody};

pub const CHAIN_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChainFile {
    pub version: u32,
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub bodies: Vec<BodySpec>,
    #[serde(default)]
    pub frames: Vec<FrameSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JointSpec {
    pub axis: [f64; 3],
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BodySpec {
    pub link: usize,
    pub mass: f64,
    pub b_diag: [f64; 3],
    #[serde(default)]
    pub com: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameSpec {
    pub name: String,
    pub link: usize,
    #[serde(default)]
    pub point: [f64; 3],
}

fn isometry(translation: &[f64; 3], rpy: &[f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(translation[0], translation[1], translation[2]),
        Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]).into(),
    )
}

impl ChainFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            context: format!("reading chain file {}", path.display()),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: ChainFile = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "parsing chain file".into(),
            source,
        })?;
        if file.version != CHAIN_FILE_VERSION {
            return Err(Error::Config(format!(
                "unsupported chain file version {} (expected {CHAIN_FILE_VERSION})",
                file.version
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "serializing chain file".into(),
            source,
        })?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            context: format!("writing chain file {}", path.display()),
            source,
        })
    }

    pub fn into_chain(self) -> Result<KinematicChain> {
        let mut chain = KinematicChain::new();
        for j in &self.joints {
            let axis = Vector3::new(j.axis[0], j.axis[1], j.axis[2]);
            chain.add_joint(isometry(&j.translation, &j.rpy), axis)?;
        }
        for b in &self.bodies {
            chain.add_body(RigidBody::new(
                b.link,
                b.mass,
                Vector3::new(b.b_diag[0], b.b_diag[1], b.b_diag[2]),
                isometry(&b.com, &b.rpy),
            )?)?;
        }
        for f in &self.frames {
            chain.add_frame(&f.name, f.link, isometry(&f.point, &[0.0; 3]))?;
        }
        Ok(chain)
    }
}
