fn main() {
    let mut stdout = std::io::stdout();
    std::process::exit(drivenorm::run(std::env::args_os(), &mut stdout));
}
