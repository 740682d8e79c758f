// Runs in its own process: it changes an environment variable.

use photoba::io::save_depth;
use photoba::DepthMap;
use photoba_cli::{run_cli_with, THREADS_ENV};

#[test]
fn thread_cap_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    save_depth(&path, &DepthMap::filled(3, 3, 2.0).unwrap()).unwrap();
    let p = path.to_str().unwrap();
    let eval = || {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        run_cli_with(["photoba", "eval", "--pred", p, "--gt", p], &mut out, &mut err)
    };
    std::env::set_var(THREADS_ENV, "0");
    assert_eq!(eval(), 1);
    std::env::set_var(THREADS_ENV, "two");
    assert_eq!(eval(), 1);
    std::env::set_var(THREADS_ENV, "1");
    assert_eq!(eval(), 0);
    std::env::remove_var(THREADS_ENV);
    assert_eq!(eval(), 0);
}
