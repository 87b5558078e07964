"""
CONFIGURAÇÃO DE EXECUÇÃO
RunConfig validado, perfis desk/completo, serialização JSON e hash,
precedência flag > ambiente > arquivo > perfil
Versão 1.0
"""
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from src.settings import Configuracao

DIRETORIO_DADOS = Path(__file__).resolve().parent.parent / "data"
ARQUIVO_PERFIS = DIRETORIO_DADOS / "perfis_execucao.json"
VARIAVEL_SAIDA = "JM3D_OUT"


class ConfiguracaoInvalidaError(ValueError):
    """Configuração com um ou mais campos inválidos"""

    def __init__(self, erros: List[str]):
        self.erros = list(erros)
        super().__init__("Configuração inválida:\n  - " + "\n  - ".join(self.erros))


@dataclass(frozen=True)
class RunConfig:
    """Parâmetros de uma execução completa (pré-treino, avaliação e ponte LLM)"""

    seed: int = 0
    # corpus sintético
    parents: int = 6
    subs_per_parent: int = 2
    samples_per_sub: int = 10
    n_points: int = 256
    manifest_path: Optional[str] = None
    image_size: int = 32
    fracao_validacao: float = 0.2
    subs_nao_vistas: Tuple[str, ...] = ("ellipsoid", "pyramid")
    # SMO
    views: int = 2
    omega_deg: float = Configuracao.OMEGA_PADRAO_GRAUS
    modo_amostragem: str = "within"
    fixed_views: bool = False
    # codificadores
    dim: int = 32
    ativacao: str = "gelu"
    usar_embeddings: bool = True
    # objetivo
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    lambda_cls: float = 1.0
    temperature: float = Configuracao.TEMPERATURA_PADRAO
    modo_alinhamento: str = "jma"
    # otimização
    batch_size: int = 32
    epochs: int = 200
    lr: float = 1e-3
    weight_decay: float = 1e-2
    lr_schedule: str = "cosine"
    # avaliação
    split_files: Tuple[str, ...] = ("data/splits/all.json", "data/splits/medium.json",
                                    "data/splits/hard.json")
    reduzir_banco: bool = True
    k_recuperacao: int = 3
    # ponte LLM
    llm_records: int = 20
    llm_steps: int = 500
    llm_lm_pretrain_steps: int = 300
    n_tokens: int = 64
    lr_principal: float = 2e-3
    lr_baixo: float = 2e-5
    projetor_camadas: int = 1
    lm_largura: int = 64
    lm_blocos: int = 2
    templates_file: str = "data/templates_instrucao.json"
    # execução
    workers: int = 1
    output_dir: str = "runs/jm3d"

    def __post_init__(self):
        for nome in ("subs_nao_vistas", "split_files"):
            object.__setattr__(self, nome, tuple(getattr(self, nome)))
        erros = self.validar()
        if erros:
            raise ConfiguracaoInvalidaError(erros)

    def validar(self) -> List[str]:
        """Lista todos os campos fora das faixas documentadas"""
        erros = []

        def exigir(condicao: bool, campo: str, regra: str):
            if not condicao:
                erros.append(f"{campo}={getattr(self, campo)!r}: {regra}")

        exigir(self.seed >= 0, "seed", "deve ser >= 0")
        for campo in ("parents", "subs_per_parent", "samples_per_sub"):
            exigir(getattr(self, campo) >= 1, campo, "deve ser >= 1")
        exigir(self.n_points >= 8, "n_points", "deve ser >= 8")
        exigir(self.image_size >= 8, "image_size", "deve ser >= 8")
        exigir(0.0 <= self.fracao_validacao < 1.0, "fracao_validacao", "deve estar em [0, 1)")
        exigir(1 <= self.views <= Configuracao.NUM_VISTAS_CANDIDATAS, "views", "deve estar em [1, 30]")
        exigir(0.0 < self.omega_deg <= 360.0, "omega_deg", "deve estar em (0, 360]")
        exigir(self.modo_amostragem in ("within", "random"), "modo_amostragem", "'within' ou 'random'")
        exigir(self.dim >= 2, "dim", "deve ser >= 2")
        exigir(self.ativacao in ("gelu", "relu"), "ativacao", "'gelu' ou 'relu'")
        for campo in ("lambda1", "lambda2", "lambda3", "lambda_cls", "lr", "weight_decay",
                      "lr_principal", "lr_baixo"):
            valor = getattr(self, campo)
            exigir(math.isfinite(valor) and valor >= 0, campo, "deve ser finito e >= 0")
        exigir(math.isfinite(self.temperature) and self.temperature > 0, "temperature", "deve ser > 0")
        exigir(self.modo_alinhamento in ("jma", "independente"), "modo_alinhamento",
               "'jma' ou 'independente'")
        exigir(self.batch_size >= 2, "batch_size", "deve ser >= 2 (perda contrastiva)")
        exigir(self.epochs >= 0, "epochs", "deve ser >= 0")
        exigir(self.lr_schedule in ("cosine", "constant"), "lr_schedule", "'cosine' ou 'constant'")
        exigir(self.k_recuperacao >= 1, "k_recuperacao", "deve ser >= 1")
        exigir(self.llm_records >= 1, "llm_records", "deve ser >= 1")
        exigir(self.llm_steps >= 0, "llm_steps", "deve ser >= 0")
        exigir(self.llm_lm_pretrain_steps >= 0, "llm_lm_pretrain_steps", "deve ser >= 0")
        exigir(0 <= self.n_tokens <= self.n_points, "n_tokens", "deve estar em [0, n_points]")
        exigir(self.projetor_camadas in (1, 2), "projetor_camadas", "1 ou 2")
        exigir(self.lm_largura >= 4 and self.lm_largura % 4 == 0, "lm_largura",
               "deve ser múltiplo de 4 (4 cabeças de atenção)")
        exigir(self.lm_blocos >= 1, "lm_blocos", "deve ser >= 1")
        exigir(self.workers >= 1, "workers", "deve ser >= 1")
        exigir(bool(self.output_dir), "output_dir", "não pode ser vazio")
        if self.modo_amostragem == "within" and 1 <= self.views <= Configuracao.NUM_VISTAS_CANDIDATAS:
            from src.smo_dados import capacidade_janela
            if self.views > 1 and self.views > capacidade_janela(self.omega_deg):
                erros.append(f"views={self.views}, omega_deg={self.omega_deg}: "
                             f"janela comporta no máximo {capacidade_janela(self.omega_deg)} vistas")
        return erros

    # ---- serialização ----

    def to_dict(self) -> Dict[str, Any]:
        dados = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dados.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, dados: Mapping[str, Any]) -> "RunConfig":
        conhecidos = {f.name for f in fields(cls)}
        desconhecidos = sorted(set(dados) - conhecidos)
        if desconhecidos:
            raise ConfiguracaoInvalidaError([f"{k}: chave desconhecida" for k in desconhecidos])
        return cls(**dict(dados))

    @classmethod
    def from_json(cls, texto: str) -> "RunConfig":
        return cls.from_dict(json.loads(texto))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def com(self, **alteracoes) -> "RunConfig":
        return replace(self, **alteracoes)

    def caminho_dados(self, relativo: str) -> Path:
        """Resolve caminhos relativos à raiz do repositório"""
        caminho = Path(relativo)
        return caminho if caminho.is_absolute() else DIRETORIO_DADOS.parent / caminho


def carregar_perfis(caminho: Union[str, Path] = ARQUIVO_PERFIS) -> Dict[str, Dict[str, Any]]:
    return json.loads(Path(caminho).read_text(encoding="utf-8"))


def carregar_perfil(nome: str = "desk") -> RunConfig:
    perfis = carregar_perfis()
    if nome not in perfis:
        raise ConfiguracaoInvalidaError([f"perfil={nome!r}: perfis disponíveis {sorted(perfis)}"])
    return RunConfig.from_dict(perfis[nome])


def carregar_config(caminho: Union[str, Path]) -> Dict[str, Any]:
    """Lê um arquivo de configuração JSON (valores parciais permitidos)"""
    dados = json.loads(Path(caminho).read_text(encoding="utf-8"))
    if not isinstance(dados, dict):
        raise ConfiguracaoInvalidaError([f"{caminho}: esperado um objeto JSON"])
    return dados


def resolver_config(perfil: str = "desk", arquivo: Optional[Union[str, Path]] = None,
                    ambiente: Optional[Mapping[str, str]] = None,
                    sobrescritas: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Combina as fontes com precedência flag > ambiente > arquivo > perfil.

    Args:
        perfil: Nome do perfil base
        arquivo: Arquivo JSON com campos do RunConfig
        ambiente: Variáveis de ambiente (padrão os.environ); JM3D_OUT define output_dir
        sobrescritas: Valores vindos de flags (None é ignorado)
    """
    dados = carregar_perfil(perfil).to_dict()
    if arquivo is not None:
        arquivo_dados = carregar_config(arquivo)
        desconhecidos = sorted(set(arquivo_dados) - set(dados))
        if desconhecidos:
            raise ConfiguracaoInvalidaError([f"{k}: chave desconhecida" for k in desconhecidos])
        dados.update(arquivo_dados)
    ambiente = os.environ if ambiente is None else ambiente
    if ambiente.get(VARIAVEL_SAIDA):
        dados["output_dir"] = ambiente[VARIAVEL_SAIDA]
    dados.update({k: v for k, v in (sobrescritas or {}).items() if v is not None})
    return RunConfig.from_dict(dados)
