fn main() {
    std::process::exit(gradphi::cli::main_with_args(std::env::args()));
}
