//! Trajectory binary format: header (magic "FTRJ", version, particle and
//! frame counts, frame dt), a length-prefixed scene document, then per
//! frame positions and velocities as little-endian f32 triples.

use std::io::{self, Read, Write};

use glam::DVec3;

use super::{FluidState, SceneSpec, Trajectory};

const FTRJ_MAGIC: &[u8; 4] = b"FTRJ";
const FTRJ_VERSION: u32 = 1;

pub fn write_trajectory<W: Write>(w: &mut W, traj: &Trajectory) -> io::Result<()> {
    let n_particles = traj.n_particles() as u32;
    let n_frames = traj.frames.len() as u32;
    w.write_all(FTRJ_MAGIC)?;
    w.write_all(&FTRJ_VERSION.to_le_bytes())?;
    w.write_all(&n_particles.to_le_bytes())?;
    w.write_all(&n_frames.to_le_bytes())?;
    w.write_all(&traj.dt.to_le_bytes())?;
    let scene = serde_json::to_vec(&traj.scene).map_err(io::Error::other)?;
    w.write_all(&(scene.len() as u32).to_le_bytes())?;
    w.write_all(&scene)?;
    let mut buf = Vec::with_capacity(n_particles as usize * 24);
    for frame in &traj.frames {
        assert_eq!(frame.len(), n_particles as usize, "ragged trajectory");
        buf.clear();
        for p in &frame.positions {
            push_vec3(&mut buf, *p);
        }
        for v in &frame.velocities {
            push_vec3(&mut buf, *v);
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(r: &mut R) -> io::Result<Trajectory> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FTRJ_MAGIC {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad FTRJ magic"));
    }
    let version = read_u32(r)?;
    if version != FTRJ_VERSION {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unsupported FTRJ version {version}"),
        ));
    }
    let n_particles = read_u32(r)? as usize;
    let n_frames = read_u32(r)? as usize;
    let mut dt_bytes = [0u8; 8];
    r.read_exact(&mut dt_bytes)?;
    let dt = f64::from_le_bytes(dt_bytes);
    let scene_len = read_u32(r)? as usize;
    let mut scene_buf = vec![0u8; scene_len];
    r.read_exact(&mut scene_buf)?;
    let scene: SceneSpec = serde_json::from_slice(&scene_buf)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;

    let mut frames = Vec::with_capacity(n_frames);
    let mut buf = vec![0u8; n_particles * 24];
    for time_index in 0..n_frames {
        r.read_exact(&mut buf)?;
        let mut positions = Vec::with_capacity(n_particles);
        let mut velocities = Vec::with_capacity(n_particles);
        for i in 0..n_particles {
            positions.push(read_vec3(&buf[i * 12..]));
        }
        let off = n_particles * 12;
        for i in 0..n_particles {
            velocities.push(read_vec3(&buf[off + i * 12..]));
        }
        frames.push(FluidState {
            positions,
            velocities,
            time_index,
        });
    }
    Ok(Trajectory { frames, dt, scene })
}

fn push_vec3(buf: &mut Vec<u8>, v: DVec3) {
    buf.extend_from_slice(&(v.x as f32).to_le_bytes());
    buf.extend_from_slice(&(v.y as f32).to_le_bytes());
    buf.extend_from_slice(&(v.z as f32).to_le_bytes());
}

fn read_vec3(buf: &[u8]) -> DVec3 {
    let f = |o: usize| f32::from_le_bytes([buf[o], buf[o + 1], buf[o + 2], buf[o + 3]]) as f64;
    DVec3::new(f(0), f(4), f(8))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_trajectory, SphConfig};
    use super::*;
    use crate::geom::Aabb;
    use glam::DQuat;

    #[test]
    fn roundtrip_preserves_structure_and_f32_precision() {
        let scene = SceneSpec {
            container: Aabb::new(DVec3::new(-0.5, -0.5, 0.0), DVec3::new(0.5, 0.5, 2.0)),
            object: Some(crate::sdf::SdfNode::sphere(0.15)),
            object_rotation: DQuat::from_axis_angle(DVec3::X, 0.4),
            object_translation: DVec3::new(0.0, 0.1, 0.15),
            fluid_block: Aabb::new(DVec3::new(-0.1, -0.1, 0.9), DVec3::new(0.1, 0.1, 1.1)),
            particle_spacing: 0.05,
            seed: 11,
        };
        let cfg = SphConfig::for_spacing(0.05);
        let traj = generate_trajectory(&scene, &cfg, 4, 2).unwrap();

        let mut bytes = Vec::new();
        write_trajectory(&mut bytes, &traj).unwrap();
        assert_eq!(&bytes[..4], b"FTRJ");

        let back = read_trajectory(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.frames.len(), traj.frames.len());
        assert_eq!(back.scene, traj.scene);
        assert!((back.dt - traj.dt).abs() < 1e-15);
        for (fa, fb) in traj.frames.iter().zip(&back.frames) {
            for (pa, pb) in fa.positions.iter().zip(&fb.positions) {
                assert!((*pa - *pb).abs().max_element() < 1e-6);
            }
        }

        // Writing the same trajectory twice is byte-identical.
        let mut again = Vec::new();
        write_trajectory(&mut again, &traj).unwrap();
        assert_eq!(bytes, again);
    }
}
