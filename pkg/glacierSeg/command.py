"""Shared base for the project's management commands.

Errors raised by the library carry their exit code; this base turns them into
``CommandError`` with that return code, and makes argument errors exit with
the usage code instead of argparse's default.
"""
import sys

from django.core.management.base import BaseCommand, CommandError

from engine.exceptions import EXIT_USAGE, GlacierSegError


class GlacierCommand(BaseCommand):
    requires_system_checks = []

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        # argparse errors become CommandError (exit 1) instead of SystemExit(2)
        parser.called_from_command_line = False
        return parser

    def run_from_argv(self, argv):
        try:
            super().run_from_argv(argv)
        except CommandError as exc:
            self.stderr.write(f'{exc.__class__.__name__}: {exc}')
            sys.exit(getattr(exc, 'returncode', EXIT_USAGE))

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except GlacierSegError as exc:
            raise CommandError(str(exc), returncode=exc.exit_code) from exc
