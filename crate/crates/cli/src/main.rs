use clap::Parser;

fn main() {
    let cli = match mopref::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors count as validation errors; help and version are not errors.
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = mopref::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
