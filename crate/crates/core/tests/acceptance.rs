//! One line per acceptance criterion. Criteria 1-7 are analytic; 8-14 train
//! the desk-scale backbone on the bundled digit subset.
//!
//! Behavioral criteria that do not hold at desk scale are reported as FAIL and
//! leave the exit status alone; an analytic failure or any error exits non-zero.

use std::process::ExitCode;
use std::time::Instant;

use fast_transfer::experiment::{behavioral_suite, default_jobs, CriterionOutcome, DeskConfig, DeskSetup};
use fast_transfer::verify::analytic_criteria;

fn report(outcomes: &[CriterionOutcome]) -> usize {
    for o in outcomes {
        println!("{}", o.line());
    }
    outcomes.iter().filter(|o| !o.passed).count()
}

fn main() -> ExitCode {
    let start = Instant::now();
    let analytic = match analytic_criteria() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("analytic criteria errored: {e}");
            return ExitCode::FAILURE;
        }
    };
    let analytic_failures = report(&analytic);

    if std::env::var_os("FAST_TRANSFER_SKIP_BEHAVIORAL").is_some() {
        println!("criteria 8-14 skipped (FAST_TRANSFER_SKIP_BEHAVIORAL is set)");
    } else {
        let behavioral = DeskSetup::desk().and_then(|setup| {
            println!(
                "desk setup: source test accuracy {:.3}",
                setup.source_accuracy()?
            );
            behavioral_suite(&setup, &DeskConfig::default(), default_jobs())
        });
        match behavioral {
            Ok(o) => {
                let failed = report(&o);
                println!("behavioral: {}/{} passed", o.len() - failed, o.len());
            }
            Err(e) => {
                eprintln!("behavioral criteria errored: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    println!(
        "analytic: {}/{} passed ({:.1}s)",
        analytic.len() - analytic_failures,
        analytic.len(),
        start.elapsed().as_secs_f64()
    );
    if analytic_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
