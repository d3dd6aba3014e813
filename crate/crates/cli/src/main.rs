fn main() {
    std::process::exit(epinv::run(std::env::args_os().collect()));
}
