import argparse
import sys

from .extract import extract, load_manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="extract-features")
    parser.add_argument("--manifest", required=True, help="CSV of image_id,path rows")
    parser.add_argument("--out", required=True, help="output IMFT feature file")
    parser.add_argument("--model", default="vgg16")
    parser.add_argument("--weights", help="local VGG16 state-dict (skips the download)")
    args = parser.parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
        skipped = extract(manifest, args.out, model_name=args.model,
                          weights_path=args.weights)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    done = len(manifest.entries) - len(skipped)
    print(f"extracted {done} feature vectors to {args.out}"
          + (f" ({len(skipped)} skipped)" if skipped else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
