use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match cmos::cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                if !clap_err.use_stderr() {
                    // --help and --version
                    print!("{clap_err}");
                    return ExitCode::SUCCESS;
                }
                let first = clap_err.to_string();
                eprintln!("{}", first.lines().next().unwrap_or("invalid arguments"));
                return ExitCode::from(2);
            }
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
