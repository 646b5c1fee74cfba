use clap::Parser;

fn main() {
    let cli = smoothlab::cli::Cli::parse();
    std::process::exit(smoothlab::cli::main_with(cli));
}
