fn main() {
    std::process::exit(oais_gateway::cli::run(std::env::args_os()));
}
