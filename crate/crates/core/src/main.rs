fn main() {
    std::process::exit(koopman_mpc::bench::cli::run(std::env::args_os()));
}
