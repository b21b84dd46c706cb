pub mod assumptions;
pub mod bounds;
pub mod hessian;
pub mod kernel;
pub mod limit;
pub mod train;
pub mod vector;

use anyhow::Result;

/// Every subcommand returns its check results; the process exits nonzero
/// iff any check failed.
pub struct RunOutcome {
    pub checks: Vec<(String, bool)>,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn print(&self) {
        for (name, ok) in &self.checks {
            println!("[{}] {}", if *ok { "PASS" } else { "FAIL" }, name);
        }
    }
}

pub type CommandResult = Result<RunOutcome>;
