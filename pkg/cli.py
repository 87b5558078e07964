"""
INTERFACE DE LINHA DE COMANDO JM3D
pretrain, eval-zeroshot, retrieve, build-tree, make-conversations,
llm-train e llm-decode sobre um diretório de execução
Versão 1.0

Uso:
    python cli.py [--perfil desk] [--config ARQ] [--seed N] [--out DIR] <comando> [opções]
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from src.config_execucao import RunConfig, carregar_config, resolver_config
from src.settings import Logger, configurar_logging, fixar_semente
from src.treinamento import (cmd_build_tree, cmd_eval, cmd_llm, cmd_llm_decode,
                             cmd_make_conversations, cmd_pretrain, cmd_retrieve,
                             ler_config_execucao)


def criar_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jm3d", description="Alinhamento tri-modal JM3D")
    parser.add_argument("--config", type=Path, default=None, help="Arquivo JSON com campos do RunConfig")
    parser.add_argument("--seed", type=int, default=None, help="Semente global")
    parser.add_argument("--out", type=str, default=None, help="Diretório de saída (sobrepõe JM3D_OUT)")
    parser.add_argument("--perfil", default="desk", help="Perfil base (desk ou completo)")
    parser.add_argument("--log", default="INFO", help="Nível de log")
    sub = parser.add_subparsers(dest="comando", required=True)

    sub.add_parser("pretrain", help="Pré-treino com retomada a partir do último checkpoint")

    p = sub.add_parser("eval-zeroshot", help="Top-1/top-5 zero-shot por split")
    p.add_argument("--run", type=Path, default=None, help="Diretório da execução (padrão: saída)")
    p.add_argument("--split", type=Path, action="append", default=None,
                   help="Arquivo de split (repetível; padrão: split_files da configuração)")

    p = sub.add_parser("retrieve", help="Top-k nuvens para uma vista de consulta .npz")
    p.add_argument("query", type=Path)
    p.add_argument("--run", type=Path, default=None)
    p.add_argument("-k", type=int, default=3)

    p = sub.add_parser("build-tree", help="Escreve arvore.json")
    p.add_argument("--pares", type=Path, default=None, help="JSON com pares [pai, sub]")

    p = sub.add_parser("make-conversations", help="Gera llm/conversas.jsonl")
    p.add_argument("--run", type=Path, default=None)
    p.add_argument("--legendas", type=Path, default=None, help="JSONL {id, caption}")

    p = sub.add_parser("llm-train", help="Treina a ponte de tokens de ponto")
    p.add_argument("--run", type=Path, default=None)

    p = sub.add_parser("llm-decode", help="Decodifica as conversas com a ponte salva")
    p.add_argument("--run", type=Path, default=None)
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    return resolver_config(perfil=args.perfil, arquivo=args.config,
                           sobrescritas={"seed": args.seed, "output_dir": args.out})


def _diretorio(args: argparse.Namespace, config: RunConfig) -> Path:
    return Path(args.run) if getattr(args, "run", None) else Path(config.output_dir)


def _config_da_execucao(args: argparse.Namespace, diretorio: Path) -> RunConfig:
    """Configuração gravada na execução, com os campos de --config por cima"""
    config = ler_config_execucao(diretorio)
    if args.config is None:
        return config
    return RunConfig.from_dict({**config.to_dict(), **carregar_config(args.config)})


def _imprimir(dados: Any) -> None:
    print(json.dumps(dados, ensure_ascii=False, indent=2, sort_keys=True))


def executar(args: argparse.Namespace) -> Dict[str, Any]:
    """Despacha o comando e devolve o resumo impresso em stdout"""
    config = _config(args)
    fixar_semente(config.seed)
    comando = args.comando
    if comando == "pretrain":
        return {"diretorio": str(cmd_pretrain(config))}
    if comando == "build-tree":
        return {"arvore": str(cmd_build_tree(config, args.pares))}

    diretorio = _diretorio(args, config)
    if comando == "eval-zeroshot":
        return cmd_eval(diretorio, split_files=args.split)
    if comando == "retrieve":
        return cmd_retrieve(diretorio, args.query, k=args.k).to_dict()
    if comando == "make-conversations":
        return {"conversas": str(cmd_make_conversations(diretorio, legendas=args.legendas))}
    if comando == "llm-train":
        return cmd_llm(_config_da_execucao(args, diretorio), diretorio)
    if comando == "llm-decode":
        return {"decodificacoes": cmd_llm_decode(diretorio)}
    raise ValueError(f"Comando desconhecido: {comando!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Ponto de entrada. Retorna 0 em sucesso, 1 em qualquer erro de execução
    e 2 em erro de uso (argparse).
    """
    parser = criar_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configurar_logging(args.log)
    try:
        _imprimir(executar(args))
    except Exception as exc:
        Logger.error(f"{args.comando}: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
