use clap::Parser;

fn main() {
    let cli = embnav_cli::Cli::parse();
    if let Err(e) = embnav_cli::run(cli) {
        eprintln!("embnav: {e}");
        std::process::exit(e.code());
    }
}
