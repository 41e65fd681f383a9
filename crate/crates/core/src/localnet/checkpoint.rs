//! FUNW checkpoints, little-endian:
//!
//! ```text
//! "FUNW" u32 version u32 n_layers (n_in u32, n_out u32) * n_layers u32 has_optimizer
//! f32 w1 b1 w2 b2 w3 b3
//! [f64 lr momentum alpha eps, f32 square_avg (6 buffers), f32 momentum_buf (6 buffers)]
//! ```

use std::fs;
use std::path::Path;

use super::{Dense, LocalNetParams, RmsProp, RmsPropConfig};
use crate::error::{FunadError, Result};
use crate::feature_store::format::{put_u32, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FUNW";
const VERSION: u32 = 1;

fn put_buffers(out: &mut Vec<u8>, p: &LocalNetParams) {
    for buf in p.buffers() {
        for v in buf {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
}

fn read_buffers(r: &mut Reader<'_>, p: &mut LocalNetParams) -> Result<()> {
    for buf in p.buffers_mut() {
        let bytes = r.take(buf.len() * 4)?;
        for (v, b) in buf.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
    }
    Ok(())
}

pub fn write_checkpoint(params: &LocalNetParams, optimizer: Option<&RmsProp>) -> Result<Vec<u8>> {
    params.validate()?;
    let mut out = Vec::with_capacity(64 + params.n_params() * 12);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, 3)?;
    for l in [&params.layer1, &params.layer2, &params.layer3] {
        put_u32(&mut out, l.n_in)?;
        put_u32(&mut out, l.n_out)?;
    }
    put_u32(&mut out, optimizer.is_some() as usize)?;
    put_buffers(&mut out, params);
    if let Some(opt) = optimizer {
        let c = opt.config;
        for v in [c.lr, c.momentum, c.alpha, c.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_buffers(&mut out, &opt.square_avg);
        put_buffers(&mut out, &opt.momentum_buf);
    }
    Ok(out)
}

pub fn read_checkpoint(buf: &[u8]) -> Result<(LocalNetParams, Option<RmsProp>)> {
    let mut r = Reader::new(buf);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FunadError::Format(format!("unsupported FUNW version {version}")));
    }
    if r.u32()? != 3 {
        return Err(FunadError::Format("expected 3 layers".into()));
    }
    let mut dims = [(0usize, 0usize); 3];
    for d in dims.iter_mut() {
        *d = (r.u32()? as usize, r.u32()? as usize);
    }
    let has_opt = match r.u32()? {
        0 => false,
        1 => true,
        other => return Err(FunadError::Format(format!("bad optimizer flag {other}"))),
    };
    let mut params = LocalNetParams {
        layer1: Dense::zeros(dims[0].0, dims[0].1),
        layer2: Dense::zeros(dims[1].0, dims[1].1),
        layer3: Dense::zeros(dims[2].0, dims[2].1),
    };
    params.validate()?;
    let n = params.n_params() as u64;
    let expected = 4 + 4 + 4 + 24 + 4 + n * 4 + if has_opt { 32 + 8 * n } else { 0 };
    if buf.len() as u64 != expected {
        return Err(FunadError::Truncated {
            expected,
            found: buf.len() as u64,
        });
    }
    read_buffers(&mut r, &mut params)?;
    params.validate()?;
    let optimizer = if has_opt {
        let mut hp = [0.0f64; 4];
        for v in hp.iter_mut() {
            let b = r.take(8)?;
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
        let config = RmsPropConfig {
            lr: hp[0],
            momentum: hp[1],
            alpha: hp[2],
            eps: hp[3],
        };
        let mut opt = RmsProp::new(config, &params)?;
        read_buffers(&mut r, &mut opt.square_avg)?;
        read_buffers(&mut r, &mut opt.momentum_buf)?;
        Some(opt)
    } else {
        None
    };
    Ok((params, optimizer))
}

pub fn save_checkpoint(path: &Path, params: &LocalNetParams, optimizer: Option<&RmsProp>) -> Result<()> {
    let bytes = write_checkpoint(params, optimizer)?;
    fs::write(path, bytes).map_err(|e| FunadError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(LocalNetParams, Option<RmsProp>)> {
    let bytes = fs::read(path).map_err(|e| FunadError::io(path, e))?;
    read_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localnet::NetShape;
    use crate::rng;

    #[test]
    fn round_trip_through_f32() {
        let shape = NetShape::new(6, 5, 3);
        let p = LocalNetParams::init(shape, &mut rng::stream(2, 0));
        let mut opt = RmsProp::new(RmsPropConfig::default(), &p).unwrap();
        opt.square_avg.layer2.bias[1] = 0.25;
        let bytes = write_checkpoint(&p, Some(&opt)).unwrap();
        assert_eq!(&bytes[..4], b"FUNW");
        let (q, o) = read_checkpoint(&bytes).unwrap();
        let o = o.unwrap();
        for (a, b) in p.buffers().iter().zip(q.buffers()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        assert_eq!(o.config, opt.config);
        assert_eq!(o.square_avg.layer2.bias[1], 0.25);
        // Written again, the bytes are identical.
        assert_eq!(write_checkpoint(&q, Some(&o)).unwrap(), bytes);
    }

    #[test]
    fn weights_only_and_truncation() {
        let p = LocalNetParams::zeros(NetShape::new(2, 2, 2));
        let bytes = write_checkpoint(&p, None).unwrap();
        let (q, o) = read_checkpoint(&bytes).unwrap();
        assert_eq!(q, p);
        assert!(o.is_none());
        assert!(matches!(
            read_checkpoint(&bytes[..bytes.len() - 1]),
            Err(FunadError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad), Err(FunadError::Format(_))));
    }
}
