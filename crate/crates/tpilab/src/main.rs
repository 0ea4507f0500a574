// SPDX-License-Identifier: Apache-2.0

fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(tpilab::cli::run(std::env::args_os()))
}
