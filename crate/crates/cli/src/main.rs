use clap::Parser;

fn main() {
    let cli = duallab_cli::Cli::parse();
    if let Err(e) = duallab_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
