from __future__ import annotations

import sys


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        # brownex.data loads + validates defaults.yaml at import time.
        import brownex.data  # noqa: F401
        from brownex.config import load_config_file, resolve_options
    except Exception as e:
        print("YAML validation failed\n")
        print(e)
        return 1

    # Optional run-config files; one naming a "command" is checked against that command's keys.
    for path in argv:
        try:
            data = load_config_file(path)
            command = data.get("command") if isinstance(data.get("command"), str) else None
            if command:
                resolve_options(command, {k: v for k, v in data.items() if k != "command"})
        except Exception as e:
            print(f"Config validation failed for {path}\n")
            print(e)
            return 1

    print("YAML validation passed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
