use std::path::Path;

use serde::{Deserialize, Serialize};

use super::alignment::AlignmentMap;
use super::bridge::{FuseMode, Fuser, FuserLayer, PROJ_DEPTH};
use crate::error::{Error, Result};
use crate::lm::checkpoint::{Container, Kind};
use crate::lm::ModelConfig;
use crate::nncore::{Activation, MlpParams, Tensor};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    sender: ModelConfig,
    receiver: ModelConfig,
    alignment: AlignmentMap,
    mode: FuseMode,
    activation: Activation,
    hidden: usize,
}

pub fn fuser_to_container(f: &Fuser) -> Result<Container> {
    f.validate()?;
    let l0 = &f.layers[0].k_proj;
    let header = Header {
        sender: f.sender.clone(),
        receiver: f.receiver.clone(),
        alignment: f.alignment.clone(),
        mode: f.mode,
        activation: l0.activation,
        hidden: l0.layers[0].n_out(),
    };
    Ok(Container {
        kind: Kind::Fuser,
        header: serde_json::to_string(&header)?,
        digests: vec![f.sender.digest(), f.receiver.digest()],
        blocks: Container::blocks_of(f),
    })
}

/// Rebuilds a fuser; the embedded config digests must match the configs in
/// the header.
pub fn fuser_from_container(c: &Container) -> Result<Fuser> {
    if c.kind != Kind::Fuser {
        return Err(Error::Checkpoint("container does not hold a fuser".into()));
    }
    let h: Header = serde_json::from_str(&c.header)?;
    if c.digests != [h.sender.digest(), h.receiver.digest()] {
        return Err(Error::Checkpoint("fuser config digests do not match its header".into()));
    }
    h.sender.validate()?;
    h.receiver.validate()?;
    let (din, dout) = (h.sender.kv_dim(), h.receiver.kv_dim());
    let mut dims = vec![din];
    dims.extend(std::iter::repeat_n(h.hidden, PROJ_DEPTH - 1));
    dims.push(dout);
    let layers = (0..h.receiver.n_layers)
        .map(|_| FuserLayer {
            k_proj: MlpParams::zeros(&dims, h.activation),
            v_proj: MlpParams::zeros(&dims, h.activation),
            gate: Tensor::zeros(&[1]),
        })
        .collect();
    let mut f = Fuser { sender: h.sender, receiver: h.receiver, alignment: h.alignment, mode: h.mode, layers };
    c.load_into(&mut f)?;
    f.validate()?;
    Ok(f)
}

pub fn save_fuser(f: &Fuser, path: &Path) -> Result<()> {
    fuser_to_container(f)?.write(path)
}

/// Loads a fuser and checks that it was trained for exactly these models.
pub fn load_fuser(path: &Path, sender: &ModelConfig, receiver: &ModelConfig) -> Result<Fuser> {
    let f = fuser_from_container(&Container::read(path)?)?;
    if f.sender.digest() != sender.digest() || f.receiver.digest() != receiver.digest() {
        return Err(Error::Checkpoint(format!(
            "fuser at {} was trained for {} -> {}, not for the given configs",
            path.display(),
            f.sender_id(),
            f.receiver_id()
        )));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::fuser::identity_fuser;

    fn pair() -> (ModelConfig, ModelConfig) {
        (ModelConfig::new("a", 1, 2, 1, 4, 5, 8), ModelConfig::new("b", 2, 2, 2, 2, 5, 8))
    }

    #[test]
    fn roundtrip() {
        let (a, b) = pair();
        let f = Fuser::init(&a, &b, FuseMode::Concat, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.frck");
        save_fuser(&f, &p).unwrap();
        assert_eq!(load_fuser(&p, &a, &b).unwrap(), f);
        let mut c = a.clone();
        c.n_layers = 3;
        assert!(matches!(load_fuser(&p, &c, &b), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn identity_roundtrip() {
        let a = ModelConfig::new("a", 2, 2, 1, 4, 5, 8);
        let mut b = a.clone();
        b.model_id = "b".into();
        let f = identity_fuser(&a, &b).unwrap();
        let back = fuser_from_container(&Container::from_bytes(&fuser_to_container(&f).unwrap().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn tampered_digest_rejected() {
        let (a, b) = pair();
        let f = Fuser::init(&a, &b, FuseMode::Mix, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let mut c = fuser_to_container(&f).unwrap();
        c.digests[0][0] ^= 1;
        assert!(fuser_from_container(&c).is_err());
    }
}
