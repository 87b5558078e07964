"""
ORQUESTRAÇÃO DE EXPERIMENTOS
Pré-treino retomável, avaliação zero-shot por split, recuperação,
conversas e estágio da ponte LLM sobre diretórios de execução
Versão 1.0
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from src import __version__
from src.alinhamento_jma import (ConfigOtimizador, EstadoTreino, LossWeights, ModeloJM3D,
                                 embeddings_nuvens, preparar_lote, train_step)
from src.avaliacao_zeroshot import (EvalSplit, LabelBank, RetrievalResult, apply_split,
                                    build_label_bank, retrieval_hit_at_k, retrieve_clouds,
                                    similaridades_zeroshot, validar_hierarquia_splits)
from src.codificadores import FrozenEncoderHandle, depth_bucket
from src.config_execucao import ConfiguracaoInvalidaError, RunConfig
from src.models import CandidateViewSet, CategoryTree, PointCloud, ViewImage
from src.persistencia import (CheckpointAusenteError, append_jsonl, caminho_checkpoint,
                              read_checkpoint, read_embedding_table, read_jsonl,
                              read_point_file, read_split, read_triplet_manifest,
                              read_view_file, ultimo_checkpoint,
                              write_checkpoint, write_embedding_table, write_jsonl, write_report,
                              write_tree, write_triplet_manifest)
from src.ponte_llm import (ConfigPonte, ConversationRecord, EstadoPonte, Projetor, TinyCausalLM,
                           Vocabulario, build_conversations, carregar_conversas, importar_legendas,
                           llm_train_step, lm_checksum, pretrain_language_model,
                           renderizar_conversa)
from src.settings import Configuracao, Logger, barra_progresso_ativa, derivar_semente, fixar_semente
from src.smo_dados import (AmostraCorpus, CorpusSpec, assemble_triplets, build_category_tree,
                           descricao_subcategoria, dividir_corpus, generate_synthetic_corpus,
                           pares_do_corpus, profundidade_maxima, renderizar_corpus,
                           within_view_sample)

Caminho = Union[str, Path]

# semente fixa dos codificadores congelados (mesmo "modelo pré-treinado" em toda execução)
SEMENTE_CONGELADOS = 0
CHECKPOINT_A_CADA = 10


# ====================== CONTEXTO DA EXECUÇÃO ======================

@dataclass
class ContextoExecucao:
    """Corpus, árvore, vistas candidatas e codificadores congelados de uma execução"""
    config: RunConfig
    corpus: List[AmostraCorpus]
    tree: CategoryTree
    treino: List[AmostraCorpus]
    validacao: List[AmostraCorpus]
    nao_vistas: List[AmostraCorpus]
    candidatos: Dict[str, CandidateViewSet]
    max_depth: float
    enc_imagem: FrozenEncoderHandle
    enc_texto: FrozenEncoderHandle
    cache: Dict = field(default_factory=dict)

    def nuvem(self, cloud_id: str) -> PointCloud:
        for amostra in self.corpus:
            if amostra.cloud.id == cloud_id:
                return amostra.cloud
        raise KeyError(f"Nuvem desconhecida: {cloud_id!r}")


def carregar_corpus(config: RunConfig) -> List[AmostraCorpus]:
    """Corpus sintético ou, se manifest_path for dado, nuvens de um manifesto de triplas"""
    if config.manifest_path is None:
        return generate_synthetic_corpus(CorpusSpec(
            parents=config.parents, subs_per_parent=config.subs_per_parent,
            samples_per_sub=config.samples_per_sub, n_points=config.n_points, seed=config.seed))
    manifesto = config.caminho_dados(config.manifest_path)
    df = read_triplet_manifest(manifesto)
    return [AmostraCorpus(read_point_file(manifesto.parent / linha.points_path, linha.id),
                          linha.parent, linha.sub)
            for linha in df.itertuples(index=False)]


def preparar_contexto(config: RunConfig) -> ContextoExecucao:
    corpus = carregar_corpus(config)
    tree = build_category_tree(pares_do_corpus(corpus))
    presentes = {a.sub for a in corpus}
    nao_vistas = [s for s in config.subs_nao_vistas if s in presentes]
    treino, validacao, retidas = dividir_corpus(corpus, config.fracao_validacao, nao_vistas,
                                                config.seed)
    candidatos = renderizar_corpus(corpus, config.image_size, config.image_size, config.workers)
    return ContextoExecucao(
        config=config, corpus=corpus, tree=tree, treino=treino, validacao=validacao,
        nao_vistas=retidas, candidatos=candidatos,
        max_depth=profundidade_maxima(candidatos.values()),
        enc_imagem=FrozenEncoderHandle("stub-image", config.dim, SEMENTE_CONGELADOS),
        enc_texto=FrozenEncoderHandle("stub-text", config.dim, SEMENTE_CONGELADOS))


def criar_modelo(config: RunConfig, ctx: ContextoExecucao) -> ModeloJM3D:
    torch.manual_seed(config.seed)
    return ModeloJM3D(dim=config.dim, n_pais=ctx.tree.n_parents, max_depth=ctx.max_depth,
                      ativacao=config.ativacao, usar_embeddings=config.usar_embeddings)


def pesos_da_config(config: RunConfig) -> LossWeights:
    return LossWeights(lambda1=config.lambda1, lambda2=config.lambda2, lambda3=config.lambda3,
                       temperature=config.temperature, lambda_cls=config.lambda_cls)


def lotes_da_epoca(n: int, ordem: Sequence[int], tamanho: int) -> List[List[int]]:
    """Fatia a ordem em lotes; um resto com menos de 2 amostras junta-se ao lote anterior"""
    lotes = [list(ordem[i:i + tamanho]) for i in range(0, n, tamanho)]
    if len(lotes) > 1 and len(lotes[-1]) < 2:
        lotes[-2].extend(lotes.pop())
    return lotes


def criar_estado(config: RunConfig, ctx: ContextoExecucao) -> EstadoTreino:
    passos_por_epoca = len(lotes_da_epoca(len(ctx.treino), range(len(ctx.treino)), config.batch_size))
    otimizador = ConfigOtimizador(lr=config.lr, weight_decay=config.weight_decay,
                                  total_passos=max(1, config.epochs * passos_por_epoca),
                                  agenda=config.lr_schedule)
    return EstadoTreino(criar_modelo(config, ctx), otimizador, seed=config.seed)


def carregar_estado(diretorio: Caminho, config: RunConfig,
                    ctx: ContextoExecucao) -> Tuple[EstadoTreino, int]:
    """Estado do último checkpoint e a época correspondente"""
    tensores, metadados = read_checkpoint(ultimo_checkpoint(diretorio))
    estado = criar_estado(config, ctx)
    estado.carregar(tensores, metadados)
    return estado, int(metadados["epoca"])


# ====================== DIRETÓRIO DA EXECUÇÃO ======================

def _iniciar_diretorio(config: RunConfig) -> Path:
    diretorio = Path(config.output_dir)
    caminho_config = diretorio / "config.json"
    if caminho_config.exists():
        existente = caminho_config.read_text(encoding="utf-8")
        if existente != config.to_json():
            raise ConfiguracaoInvalidaError(
                [f"output_dir={config.output_dir!r}: diretório já contém execução com outra configuração"])
    else:
        diretorio.mkdir(parents=True, exist_ok=True)
        caminho_config.write_text(config.to_json(), encoding="utf-8")
    if not (diretorio / "manifest.json").exists():
        _escrever_manifesto(diretorio, {"config_hash": config.config_hash,
                                        "versao_codigo": __version__, "checkpoints": []})
    return diretorio


def _escrever_manifesto(diretorio: Path, manifesto: Dict) -> None:
    (diretorio / "manifest.json").write_text(
        json.dumps(manifesto, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def ler_manifesto(diretorio: Caminho) -> Dict:
    return json.loads(Path(diretorio, "manifest.json").read_text(encoding="utf-8"))


def ler_config_execucao(diretorio: Caminho) -> RunConfig:
    caminho = Path(diretorio, "config.json")
    if not caminho.exists():
        raise CheckpointAusenteError(f"Diretório sem execução (config.json ausente): {diretorio}")
    return RunConfig.from_json(caminho.read_text(encoding="utf-8"))


def _registrar_checkpoint(diretorio: Path, estado: EstadoTreino, epoca: int,
                          ctx: ContextoExecucao) -> Path:
    metadados = estado.metadados()
    metadados.update({"epoca": epoca, "max_depth": ctx.max_depth,
                      "config_hash": ctx.config.config_hash})
    caminho = write_checkpoint(caminho_checkpoint(diretorio, epoca), estado.tensores(), metadados)
    manifesto = ler_manifesto(diretorio)
    relativo = caminho.relative_to(diretorio).as_posix()
    if relativo not in manifesto["checkpoints"]:
        manifesto["checkpoints"].append(relativo)
    _escrever_manifesto(diretorio, manifesto)
    return caminho


# ====================== ÁRVORE DE CATEGORIAS ======================

def cmd_build_tree(config: RunConfig, pares: Optional[Caminho] = None) -> Path:
    """
    Escreve <output_dir>/arvore.json a partir do corpus da configuração ou de
    um arquivo JSON com pares [pai, sub] (sub nulo herda o nome do pai).
    """
    if pares is None:
        lista = pares_do_corpus(carregar_corpus(config))
    else:
        lista = [tuple(p) for p in json.loads(Path(pares).read_text(encoding="utf-8"))]
    tree = build_category_tree(lista)
    destino = write_tree(Path(config.output_dir) / "arvore.json", tree)
    Logger.info(f"Árvore com {tree.n_parents} pais e {len(tree.subcategorias)} subcategorias em {destino}")
    return destino


# ====================== PRÉ-TREINO ======================

def triplas_da_epoca(ctx: ContextoExecucao, epoca: int):
    """Vistas redesenhadas a cada época (ou fixas com fixed_views)"""
    config = ctx.config
    semente = derivar_semente(config.seed, 0 if config.fixed_views else epoca)
    return assemble_triplets(ctx.treino, ctx.tree, config.views, config.omega_deg, semente,
                             candidatos=ctx.candidatos, modo_amostragem=config.modo_amostragem)


def executar_epoca(estado: EstadoTreino, ctx: ContextoExecucao, epoca: int) -> Dict[str, float]:
    config = ctx.config
    triplas = triplas_da_epoca(ctx, epoca)
    ordem = estado.ordem_embaralhada(len(triplas))
    pesos = pesos_da_config(config)
    linhas = []
    for indices in lotes_da_epoca(len(triplas), ordem, config.batch_size):
        lote = preparar_lote([triplas[i] for i in indices], ctx.tree, ctx.enc_imagem,
                             ctx.enc_texto, ctx.max_depth, ctx.cache)
        linhas.append(train_step(estado, lote, pesos, config.modo_alinhamento))
    chaves = [k for k in linhas[0] if k not in ("lr", "passo")]
    linha = {k: float(np.mean([l[k] for l in linhas])) for k in chaves}
    linha.update({"epoca": epoca, "lr": linhas[0]["lr"], "passo": estado.passo})
    return linha


def cmd_pretrain(config: RunConfig, ctx: Optional[ContextoExecucao] = None) -> Path:
    """
    Executa (ou retoma) o pré-treino e devolve o diretório da execução.

    Escreve config.json, manifest.json, arvore.json, triplets.jsonl (vistas
    da época 1), checkpoints/epoca_XXXX.jmck e uma linha por época em
    metricas.jsonl. A retomada parte do último checkpoint e reproduz a
    continuação sem interrupção.
    """
    fixar_semente(config.seed)
    diretorio = _iniciar_diretorio(config)
    ctx = ctx or preparar_contexto(config)
    write_tree(diretorio / "arvore.json", ctx.tree)
    if not (diretorio / "triplets.jsonl").exists():
        write_triplet_manifest(diretorio, assemble_triplets(
            ctx.corpus, ctx.tree, config.views, config.omega_deg,
            derivar_semente(config.seed, 1), candidatos=ctx.candidatos,
            modo_amostragem=config.modo_amostragem))

    try:
        estado, epoca_inicial = carregar_estado(diretorio, config, ctx)
        Logger.info(f"Retomando {diretorio} a partir da época {epoca_inicial}")
    except CheckpointAusenteError:
        estado, epoca_inicial = criar_estado(config, ctx), 0
        _registrar_checkpoint(diretorio, estado, 0, ctx)

    caminho_metricas = diretorio / "metricas.jsonl"
    ja_registradas = len(read_jsonl(caminho_metricas)) if caminho_metricas.exists() else 0
    epocas = range(epoca_inicial + 1, config.epochs + 1)
    for epoca in tqdm(epocas, desc="Pré-treino", disable=not barra_progresso_ativa()):
        linha = executar_epoca(estado, ctx, epoca)
        if epoca > ja_registradas:
            append_jsonl(caminho_metricas, [linha])
        Logger.info(f"época {epoca}: total={linha['total']:.4f} "
                    f"C-J={linha['contraste_nuvem_juncao']:.4f} "
                    f"C-T={linha['contraste_nuvem_texto']:.4f} "
                    f"T-J={linha['contraste_texto_juncao']:.4f} "
                    f"cls={linha['classificacao_pai']:.4f}")
        if epoca % CHECKPOINT_A_CADA == 0 or epoca == config.epochs:
            _registrar_checkpoint(diretorio, estado, epoca, ctx)
    return diretorio


# ====================== AVALIAÇÃO ======================

def banco_de_rotulos(ctx: ContextoExecucao) -> LabelBank:
    return build_label_bank(ctx.tree.subcategorias, Configuracao.TEMPLATE_PROMPT, ctx.enc_texto)


def _avaliar_conjunto(modelo: ModeloJM3D, amostras: Sequence[AmostraCorpus], bank: LabelBank,
                      split, reduzir_banco: bool) -> Dict[str, object]:
    embs = embeddings_nuvens(modelo, [a.cloud.points for a in amostras])
    sims = similaridades_zeroshot(embs, bank)
    return apply_split(sims, [a.sub for a in amostras], split, bank.categories, reduzir_banco)


def cmd_eval(diretorio: Caminho, split_files: Optional[Sequence[Caminho]] = None,
             ctx: Optional[ContextoExecucao] = None) -> Dict[str, Dict[str, object]]:
    """
    Top-1/top-5 zero-shot por split no último checkpoint.

    Avalia as amostras de validação das subcategorias treinadas e, se houver,
    as subcategorias nunca vistas no treino (relatório 'nao_vistas').
    """
    diretorio = Path(diretorio)
    config = ler_config_execucao(diretorio)
    ctx = ctx or preparar_contexto(config)
    estado, epoca = carregar_estado(diretorio, config, ctx)
    bank = banco_de_rotulos(ctx)
    arquivos = split_files if split_files else [config.caminho_dados(s) for s in config.split_files]
    splits = [read_split(arquivo) for arquivo in arquivos]
    por_nome = {s.name: s for s in splits}
    if "Medium" in por_nome and "Hard" in por_nome:
        validar_hierarquia_splits(por_nome["Medium"], por_nome["Hard"])
    relatorios = {}
    for split in splits:
        relatorio = _avaliar_conjunto(estado.modelo, ctx.validacao, bank, split, config.reduzir_banco)
        relatorio["epoca"] = epoca
        write_report(diretorio / "relatorios" / f"{split.name.lower()}.json", relatorio)
        relatorios[split.name] = relatorio
        Logger.info(f"{split.name}: top1={relatorio['top1']:.3f} top5={relatorio['top5']:.3f} "
                    f"n={relatorio['n']}")
    if ctx.nao_vistas:
        relatorio = _avaliar_conjunto(estado.modelo, ctx.nao_vistas, bank, EvalSplit("All"), False)
        relatorio["epoca"] = epoca
        write_report(diretorio / "relatorios" / "nao_vistas.json", relatorio)
        relatorios["nao_vistas"] = relatorio
    return relatorios


# ====================== RECUPERAÇÃO ======================

def transformacao_consulta(modelo: ModeloJM3D, max_depth: float):
    """Funde o embedding bruto da vista com as tabelas treinadas de ângulo e profundidade"""
    def transformar(vista: ViewImage, bruto: np.ndarray) -> np.ndarray:
        dtype = modelo.vistas.angulo.dtype
        with torch.no_grad():
            fundido = modelo.vistas(
                torch.as_tensor(bruto, dtype=dtype).view(1, 1, -1),
                torch.tensor([[vista.angle_index]]),
                torch.as_tensor(depth_bucket([[vista.mean_depth]], max_depth)))
        return fundido.view(-1).double().numpy()
    return transformar


def galeria(diretorio: Path, modelo: ModeloJM3D, ctx: ContextoExecucao,
            epoca: int) -> List[Tuple[str, np.ndarray]]:
    """Embeddings de todas as nuvens do corpus, em cache EMB1 por época"""
    caminho = diretorio / "galeria" / f"epoca_{epoca:04d}.emb"
    if caminho.exists():
        tabela = read_embedding_table(caminho)
        return [(a.cloud.id, tabela[a.cloud.id]) for a in ctx.corpus]
    embs = embeddings_nuvens(modelo, [a.cloud.points for a in ctx.corpus])
    write_embedding_table(caminho, {a.cloud.id: e for a, e in zip(ctx.corpus, embs)})
    return [(a.cloud.id, e) for a, e in zip(ctx.corpus, embs)]


def cmd_retrieve(diretorio: Caminho, consulta: Union[Caminho, ViewImage], k: int = 3,
                 ctx: Optional[ContextoExecucao] = None) -> RetrievalResult:
    """Top-k nuvens da galeria para uma vista de consulta (.npz ou ViewImage)"""
    diretorio = Path(diretorio)
    config = ler_config_execucao(diretorio)
    vista = consulta if isinstance(consulta, ViewImage) else read_view_file(consulta)
    ctx = ctx or preparar_contexto(config)
    estado, epoca = carregar_estado(diretorio, config, ctx)
    resultado = retrieve_clouds(vista, galeria(diretorio, estado.modelo, ctx, epoca), ctx.enc_imagem,
                                k, transformar=transformacao_consulta(estado.modelo, ctx.max_depth))
    write_report(diretorio / "relatorios" / "recuperacao.json", resultado.to_dict())
    return resultado


def avaliar_recuperacao(modelo: ModeloJM3D, ctx: ContextoExecucao,
                        amostras: Sequence[AmostraCorpus], k: int = 3) -> Dict[str, float]:
    """
    Uma vista sorteada de cada nuvem consulta a galeria inteira.

    Returns:
        {"propria": hit@k da própria nuvem, "categoria": hit@k de qualquer
        nuvem da mesma subcategoria}
    """
    embs = embeddings_nuvens(modelo, [a.cloud.points for a in ctx.corpus])
    itens = [(a.cloud.id, e) for a, e in zip(ctx.corpus, embs)]
    transformar = transformacao_consulta(modelo, ctx.max_depth)
    resultados, proprias, da_categoria = [], [], []
    for i, amostra in enumerate(amostras):
        vista = within_view_sample(ctx.candidatos[amostra.cloud.id], 1, ctx.config.omega_deg,
                                   derivar_semente(ctx.config.seed, 7, i))[0]
        resultados.append(retrieve_clouds(vista, itens, ctx.enc_imagem, k, transformar))
        proprias.append({amostra.cloud.id})
        da_categoria.append({a.cloud.id for a in ctx.corpus if a.sub == amostra.sub})
    return {"propria": retrieval_hit_at_k(resultados, proprias, k),
            "categoria": retrieval_hit_at_k(resultados, da_categoria, k)}


# ====================== EXPERIMENTO DE MESA ======================

def experimento_mesa(config: RunConfig) -> Dict[str, object]:
    """
    Pré-treino no corpus sintético seguido das métricas do experimento:
    top-1 de validação, top-1 em subcategorias nunca treinadas e hit@3 da
    própria nuvem (com o hit@3 por subcategoria ao lado).
    """
    ctx = preparar_contexto(config)
    diretorio = cmd_pretrain(config, ctx)
    relatorios = cmd_eval(diretorio, ctx=ctx)
    estado, _ = carregar_estado(diretorio, config, ctx)
    recuperacao = avaliar_recuperacao(estado.modelo, ctx, ctx.validacao, config.k_recuperacao)
    return {
        "top1_validacao": relatorios["All"]["top1"],
        "top1_nao_vistas": relatorios.get("nao_vistas", {}).get("top1"),
        "hit3_recuperacao": recuperacao["propria"],
        "hit3_categoria": recuperacao["categoria"],
        "metricas": read_jsonl(diretorio / "metricas.jsonl") if config.epochs else [],
    }


def comparar_ablacao(config: RunConfig, seeds: Sequence[int]) -> List[Dict[str, float]]:
    """JMA contra alinhamento independente com as mesmas sementes"""
    linhas = []
    for seed in seeds:
        linha = {"seed": seed}
        for modo in ("jma", "independente"):
            variante = config.com(seed=seed, modo_alinhamento=modo,
                                  output_dir=str(Path(config.output_dir, f"{modo}_{seed}")))
            linha[f"top1_{modo}"] = experimento_mesa(variante)["top1_validacao"]
        linhas.append(linha)
        Logger.info(f"ablação seed={seed}: jma={linha['top1_jma']:.3f} "
                    f"independente={linha['top1_independente']:.3f}")
    return linhas


# ====================== PONTE LLM ======================

def legendas_sinteticas(ctx: ContextoExecucao, n: int) -> List[Tuple[str, str]]:
    """n legendas alternando subcategorias (descrição autoral da forma)"""
    por_sub: Dict[str, List[AmostraCorpus]] = {}
    for amostra in ctx.treino:
        por_sub.setdefault(amostra.sub, []).append(amostra)
    intercaladas = [grupo[i] for i in range(max(map(len, por_sub.values())))
                    for grupo in por_sub.values() if i < len(grupo)]
    return [(a.cloud.id, descricao_subcategoria(a.sub)) for a in intercaladas[:n]]


def _carregar_templates(config: RunConfig) -> List[str]:
    dados = json.loads(config.caminho_dados(config.templates_file).read_text(encoding="utf-8"))
    return list(dados["templates"])


def cmd_make_conversations(diretorio: Caminho, legendas: Optional[Caminho] = None,
                           ctx: Optional[ContextoExecucao] = None) -> Path:
    """Escreve llm/conversas.jsonl e llm/vocabulario.json"""
    diretorio = Path(diretorio)
    config = ler_config_execucao(diretorio)
    ctx = ctx or preparar_contexto(config)
    pares = importar_legendas(legendas) if legendas else legendas_sinteticas(ctx, config.llm_records)
    templates = _carregar_templates(config)
    descricoes = [descricao_subcategoria(a.sub) for a in ctx.corpus]
    vocab = Vocabulario.construir([c for _, c in pares] + templates + descricoes)
    registros = build_conversations(pares, templates, vocab, derivar_semente(config.seed, 11))
    pasta = diretorio / "llm"
    write_jsonl(pasta / "conversas.jsonl", [r.to_dict() for r in registros])
    (pasta / "vocabulario.json").write_text(
        json.dumps(vocab.to_list(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return pasta / "conversas.jsonl"


def _ler_conversas(pasta: Path) -> Tuple[Vocabulario, List[ConversationRecord]]:
    vocab = Vocabulario(json.loads((pasta / "vocabulario.json").read_text(encoding="utf-8")))
    return vocab, carregar_conversas(read_jsonl(pasta / "conversas.jsonl"), vocab)


def _salvar_ponte(pasta: Path, estado: EstadoPonte, vocab: Vocabulario, checksum: str) -> Path:
    tensores = {f"projetor/{n}": p for n, p in estado.projetor.named_parameters()}
    tensores.update({f"codificador/{n}": p for n, p in estado.codificador.named_parameters()})
    tensores.update({f"lm/{n}": p for n, p in estado.lm.named_parameters()})
    metadados = {"passo": estado.passo, "vocabulario": vocab.to_list(), "lm_checksum": checksum,
                 "n_tokens": estado.config.n_tokens}
    return write_checkpoint(pasta / "ponte.jmck", tensores, metadados)


def _criar_lm(config: RunConfig, vocab: Vocabulario) -> TinyCausalLM:
    torch.manual_seed(derivar_semente(config.seed, 13))
    return TinyCausalLM(vocab, largura=config.lm_largura, n_blocos=config.lm_blocos)


def _criar_ponte(config: RunConfig, modelo: ModeloJM3D, lm: TinyCausalLM) -> EstadoPonte:
    torch.manual_seed(derivar_semente(config.seed, 19))
    projetor = Projetor(modelo.codificador_pontos.largura_intermediaria, config.lm_largura,
                        camadas=config.projetor_camadas)
    ponte = ConfigPonte(lr_principal=config.lr_principal, lr_baixo=config.lr_baixo,
                        n_tokens=config.n_tokens)
    return EstadoPonte(projetor, modelo.codificador_pontos, lm, ponte)


def _carregar_ponte(pasta: Path, config: RunConfig, vocab: Vocabulario,
                    modelo: ModeloJM3D) -> EstadoPonte:
    tensores, metadados = read_checkpoint(pasta / "ponte.jmck")
    estado = _criar_ponte(config, modelo, _criar_lm(config, vocab))
    modulos = {"projetor": estado.projetor, "codificador": estado.codificador, "lm": estado.lm}
    with torch.no_grad():
        for prefixo, modulo in modulos.items():
            for nome, p in modulo.named_parameters():
                p.copy_(tensores[f"{prefixo}/{nome}"].to(p.dtype))
    estado.passo = int(metadados["passo"])
    return estado


def decodificar_registros(estado: EstadoPonte, registros: Sequence[ConversationRecord],
                          ctx: ContextoExecucao, vocab: Vocabulario) -> List[Dict[str, object]]:
    saidas = []
    for r in registros:
        previsto = estado.decodificar(r, ctx.nuvem(r.id))
        saidas.append({"id": r.id, "prediction": previsto,
                       "exact_match": previsto == vocab.normalizar(r.caption)})
    return saidas


def cmd_llm(config: RunConfig, diretorio: Caminho,
            ctx: Optional[ContextoExecucao] = None) -> Dict[str, object]:
    """
    Estágio da ponte: aquece e congela o LM, treina projetor (lr principal)
    e codificador de pontos (lr baixo) e decodifica as conversas de treino
    e uma lista retida de nuvens de validação.

    Raises:
        CheckpointAusenteError: sem checkpoint de pré-treino em diretorio
    """
    diretorio = Path(diretorio)
    ctx = ctx or preparar_contexto(config)
    estado_jm3d, _ = carregar_estado(diretorio, config, ctx)
    pasta = diretorio / "llm"
    if not (pasta / "conversas.jsonl").exists():
        cmd_make_conversations(diretorio, ctx=ctx)
    vocab, registros = _ler_conversas(pasta)

    lm = _criar_lm(config, vocab)
    pretrain_language_model(lm, registros, config.n_tokens, config.llm_lm_pretrain_steps,
                            seed=derivar_semente(config.seed, 17))
    ponte = _criar_ponte(config, estado_jm3d.modelo, lm)
    checksum_inicial = lm_checksum(ponte.lm)

    lote = [(r, ctx.nuvem(r.id)) for r in registros]
    caminho_metricas = pasta / "metricas.jsonl"
    write_jsonl(caminho_metricas, [])
    for _ in tqdm(range(config.llm_steps), desc="Treino da ponte", disable=not barra_progresso_ativa()):
        linha = llm_train_step(ponte, lote)
        if linha["passo"] % 50 == 0 or linha["passo"] == config.llm_steps:
            append_jsonl(caminho_metricas, [linha])
            Logger.info(f"ponte passo {linha['passo']}: perda={linha['perda']:.4f}")

    checksum_final = lm_checksum(ponte.lm)
    _salvar_ponte(pasta, ponte, vocab, checksum_final)

    retidas = [renderizar_conversa(a.cloud.id, registros[0].instruction,
                                   descricao_subcategoria(a.sub), "point-first", vocab)
               for a in ctx.validacao[:5]]
    decodificacoes = decodificar_registros(ponte, registros, ctx, vocab)
    retidas_dec = decodificar_registros(ponte, retidas, ctx, vocab)
    write_jsonl(pasta / "decodificacoes.jsonl", decodificacoes)
    write_jsonl(pasta / "decodificacoes_retidas.jsonl", retidas_dec)
    exatas = sum(d["exact_match"] for d in decodificacoes)
    Logger.info(f"Ponte: {exatas}/{len(decodificacoes)} legendas exatas; "
                f"LM inalterado={checksum_inicial == checksum_final}")
    return {"exatas": exatas, "total": len(decodificacoes),
            "exatas_retidas": sum(d["exact_match"] for d in retidas_dec),
            "lm_checksum_inicial": checksum_inicial, "lm_checksum_final": checksum_final}


def cmd_llm_decode(diretorio: Caminho, ctx: Optional[ContextoExecucao] = None) -> List[Dict[str, object]]:
    """Decodifica as conversas com a ponte salva em llm/ponte.jmck"""
    diretorio = Path(diretorio)
    config = ler_config_execucao(diretorio)
    ctx = ctx or preparar_contexto(config)
    estado_jm3d, _ = carregar_estado(diretorio, config, ctx)
    pasta = diretorio / "llm"
    vocab, registros = _ler_conversas(pasta)
    ponte = _carregar_ponte(pasta, config, vocab, estado_jm3d.modelo)
    saidas = decodificar_registros(ponte, registros, ctx, vocab)
    write_jsonl(pasta / "decodificacoes.jsonl", saidas)
    return saidas
