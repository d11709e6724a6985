mod design;
mod eval;
mod gen_data;
mod rollout;
mod sdf_check;
mod train;

pub use design::cmd_design;
pub use eval::cmd_eval;
pub use gen_data::cmd_gen_data;
pub use rollout::cmd_rollout;
pub use sdf_check::cmd_sdf_check;
pub use train::cmd_train;

use std::path::Path;

use sdfsim_core::reference_sim::{read_trajectory, write_trajectory, Trajectory};

use crate::CliError;

pub(crate) fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Io(format!("opening {}: {e}", path.display())))?;
    read_trajectory(&mut std::io::BufReader::new(file))
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))
}

pub(crate) fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    write_trajectory(&mut w, traj)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))
}

/// Frames `[from..]` of a trajectory as a standalone trajectory.
pub(crate) fn tail_trajectory(traj: &Trajectory, from: usize) -> Trajectory {
    Trajectory {
        frames: traj.frames[from..].to_vec(),
        dt: traj.dt,
        scene: traj.scene.clone(),
    }
}
