//! Self-describing model checkpoint.
//!
//! Layout: magic `RGRF`, `u32` format version, `u32` header length, a JSON
//! header, then little-endian `f64` payload blocks in header order:
//! primitive geometry (10 per primitive), attribute parameters, decoder
//! parameters, and the first/second optimizer moments of each group.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{FieldNetworks, GaussianPrimitive, GrfConfig, GrfModel, GEOMETRY_PARAMS};
use crate::error::{Result, TwinError};
use crate::nn::{Activation, Adam, Mlp};
use crate::tensor_io::{read_f64s, read_u32, write_f64s};

const MAGIC: &[u8; 4] = b"RGRF";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    num_primitives: usize,
    latent_dim: usize,
    encoding_levels: usize,
    tx_elements: usize,
    rx_elements: usize,
    attr_sizes: Vec<usize>,
    dec_sizes: Vec<usize>,
    steps: [u64; 3],
    config: GrfConfig,
}

impl GrfModel {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            num_primitives: self.num_primitives(),
            latent_dim: self.config.latent_dim,
            encoding_levels: self.config.encoding_levels,
            tx_elements: self.config.tx_elements,
            rx_elements: self.config.rx_elements,
            attr_sizes: self.networks.attr.sizes().to_vec(),
            dec_sizes: self.networks.dec.sizes().to_vec(),
            steps: [
                self.opt_geometry.steps(),
                self.opt_attr.steps(),
                self.opt_dec.steps(),
            ],
            config: self.config.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut geo = vec![0.0; GEOMETRY_PARAMS * self.num_primitives()];
        for (i, p) in self.primitives.iter().enumerate() {
            p.write_params(&mut geo[GEOMETRY_PARAMS * i..GEOMETRY_PARAMS * (i + 1)]);
        }
        write_f64s(&mut w, &geo)?;
        write_f64s(&mut w, self.networks.attr.params())?;
        write_f64s(&mut w, self.networks.dec.params())?;
        for opt in [&self.opt_geometry, &self.opt_attr, &self.opt_dec] {
            let (m, v) = opt.moments();
            write_f64s(&mut w, m)?;
            write_f64s(&mut w, v)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TwinError::Format("not a field checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(TwinError::Format(format!("unsupported checkpoint version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let h: Header = serde_json::from_slice(&json)?;
        h.config.validate()?;
        if h.attr_sizes != h.config.attr_sizes() || h.dec_sizes != h.config.dec_sizes() {
            return Err(TwinError::Format("network sizes disagree with config".into()));
        }
        if h.num_primitives != h.config.num_primitives {
            return Err(TwinError::Format("primitive count disagrees with config".into()));
        }
        let n_geo = GEOMETRY_PARAMS * h.num_primitives;
        let geo = read_f64s(&mut r, n_geo)?;
        let primitives = geo
            .chunks(GEOMETRY_PARAMS)
            .map(GaussianPrimitive::from_params)
            .collect();
        let n_attr = count(&h.attr_sizes);
        let n_dec = count(&h.dec_sizes);
        let attr = Mlp::from_params(&h.attr_sizes, Activation::Tanh, read_f64s(&mut r, n_attr)?)
            .ok_or_else(|| TwinError::Format("attribute parameters".into()))?;
        let dec = Mlp::from_params(&h.dec_sizes, Activation::Tanh, read_f64s(&mut r, n_dec)?)
            .ok_or_else(|| TwinError::Format("decoder parameters".into()))?;
        let networks = FieldNetworks {
            attr,
            dec,
            encoding_levels: h.encoding_levels,
            latent_dim: h.latent_dim,
        };
        let mut model = GrfModel::assemble(h.config, primitives, networks)?;
        let sizes = [n_geo, n_attr, n_dec];
        let mut opts = Vec::with_capacity(3);
        for (k, &n) in sizes.iter().enumerate() {
            let m = read_f64s(&mut r, n)?;
            let v = read_f64s(&mut r, n)?;
            opts.push(Adam::from_moments(m, v, h.steps[k]));
        }
        model.opt_dec = opts.pop().unwrap();
        model.opt_attr = opts.pop().unwrap();
        model.opt_geometry = opts.pop().unwrap();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}
