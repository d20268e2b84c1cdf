#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(doc) = survfin::config::parse_config(text) {
            if let Ok(env) = doc.environment() {
                let _ = doc.constraint_specs(&env);
            }
            let _ = doc.solver_options();
            let _ = doc.validate_run();
        }
    }
});
