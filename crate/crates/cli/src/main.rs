fn main() {
    std::process::exit(privsense::run(std::env::args_os()));
}
